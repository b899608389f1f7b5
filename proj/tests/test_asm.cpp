// Copyright (c) u8k-verifier contributors.
// SPDX-License-Identifier: MIT

#include <filesystem>
#include <fstream>
#include <sstream>

#include <catch_amalgamated.hpp>

#include "u8k/assembler.hpp"

using namespace u8k;

namespace {

std::vector<std::filesystem::path> corpus_sources() {
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(U8K_CORPUS_DIR)) {
        if (e.path().extension() == ".s") out.push_back(e.path());
    }
    std::ranges::sort(out);
    return out;
}

AsmError::Kind error_kind(const std::string& src) {
    try {
        assemble(src);
    } catch (const AsmError& e) {
        return e.kind();
    }
    FAIL("no error raised for: " << src);
    return AsmError::Kind::Syntax;
}

} // namespace

TEST_CASE("halt assembles to two zero bytes") {
    auto img = assemble("halt\n");
    CHECK(img.origin == 0);
    CHECK(img.bytes == std::vector<Byte>{0, 0});
}

TEST_CASE("example kernel exports cur and ctx") {
    auto img = assemble_file(U8K_CORPUS_DIR "/kernel_fig1.s");
    CHECK(img.symbol("cur") == Address{0xA0});
    CHECK(img.symbol("ctx") == Address{0xA1});
    CHECK(img.entry_reset.has_value());
    CHECK(img.code_end() < 0x9F);
}

TEST_CASE("assembler errors") {
    CHECK(error_kind("jmp nowhere\n") == AsmError::Kind::UnresolvedLabel);
    CHECK(error_kind("frob r0\n") == AsmError::Kind::UnknownMnemonic);
    CHECK(error_kind("a: halt\na: halt\n") == AsmError::Kind::DuplicateLabel);
    CHECK(error_kind("ldi r0, 0x100\n") == AsmError::Kind::RangeError);
    CHECK(error_kind("ldi r0\n") == AsmError::Kind::Syntax);
}

TEST_CASE("label+const operands") {
    auto img = assemble(".org 0x10\nx: .byte 0\nld r0, [x+3]\n");
    CHECK(img.bytes[1] == (static_cast<Byte>(Opcode::LoadDir) << 3));
    CHECK(img.bytes[2] == 0x13);
}

TEST_CASE("every corpus program assembles deterministically and decodes at each instruction") {
    for (const auto& path : corpus_sources()) {
        INFO(path.string());
        auto a = assemble_file(path.string());
        auto b = assemble_file(path.string());
        CHECK(write_image(a) == write_image(b));

        std::ifstream in(path);
        std::stringstream buf;
        buf << in.rdbuf();
        const auto listing = assemble_listing(buf.str());
        CHECK_FALSE(listing.instructions.empty());
        for (Address addr : listing.instructions) {
            const auto off = addr - a.origin;
            CHECK(std::holds_alternative<Instruction>(decode(a.bytes[off], a.bytes[off + 1])));
        }
    }
}

TEST_CASE("committed corpus images match their sources") {
    for (const auto& path : corpus_sources()) {
        auto img_path = path;
        img_path.replace_extension(".img");
        INFO(img_path.string());
        REQUIRE(std::filesystem::exists(img_path));
        CHECK(load_image_file(img_path.string()) == assemble_file(path.string()));
    }
}
