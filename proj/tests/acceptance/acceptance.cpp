#include <cstring>
#include <iostream>

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::cout << "acceptance suite placeholder\n";
  return 1;
}
