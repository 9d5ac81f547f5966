// Copyright 2026 The specdec Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "specdec/bench.hpp"

int main() {
    std::cout << "specdec cli placeholder\n";
    return 0;
}
