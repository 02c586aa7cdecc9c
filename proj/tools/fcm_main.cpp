#include <cstdio>

int main() {
    std::printf("fcm: no command given\n");
    return 2;
}
