#include <cstdio>

int main() {
  std::puts("rapl-lab: no subcommands wired yet");
  return 1;
}
