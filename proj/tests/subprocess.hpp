#pragma once

// Helpers for tests that drive the installed CLI binary.

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace cli {

struct RunResult {
    int status = -1;
    std::string output;  // stdout + stderr interleaved
};

// Path to the mimo binary: MIMO_BIN env var, else ../bin/mimo relative to cwd
// (the ctest working directory is the tests build dir).
inline std::string binary_path() {
    if (const char* env = std::getenv("MIMO_BIN")) return env;
    return (std::filesystem::current_path().parent_path() / "bin" / "mimo").string();
}

inline RunResult run(const std::string& args) {
    const std::string cmd = binary_path() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed for: " + cmd);
    RunResult res;
    std::array<char, 4096> buf;
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) res.output.append(buf.data(), n);
    const int rc = pclose(pipe);
    res.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    return res;
}

}  // namespace cli
