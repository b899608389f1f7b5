// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include <iostream>

#include <CLI11.hpp>

#include "u8k/assembler.hpp"

int main(int argc, char** argv) {
    CLI::App app{"u8k assembler"};
    std::string input;
    std::string output;
    app.add_option("input", input, "assembly source")->required();
    app.add_option("-o,--output", output, "output image")->required();
    CLI11_PARSE(app, argc, argv);

    try {
        u8k::save_image_file(u8k::assemble_file(input), output);
    } catch (const std::exception& e) {
        std::cerr << input << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
