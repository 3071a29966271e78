#include <iostream>

int main() {
  std::cout << "mspl: subcommands not wired up yet\n";
  return 1;
}
