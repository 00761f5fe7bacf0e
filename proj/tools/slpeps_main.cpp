#include <cstdio>

int main() {
  std::puts("slpeps: placeholder");
  return 0;
}
