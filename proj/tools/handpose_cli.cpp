#include <cstdio>

int main() {
  std::puts("handpose_cli: subcommands not wired yet");
  return 1;
}
