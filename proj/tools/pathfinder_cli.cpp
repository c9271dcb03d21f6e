#include <iostream>

int main() {
  std::cout << "pathfinder cli placeholder\n";
  return 0;
}
