#include <cstdio>

int main() {
  std::puts("qasim: cli under construction");
  return 0;
}
