// Shared fixtures for the test binaries.
#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "dff/core.hpp"
#include "dff/random.hpp"

namespace dff::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        std::string name = "dff_";
        if (info) name += std::string(info->test_suite_name()) + "_" + info->name();
        path_ = std::filesystem::temp_directory_path() / name;
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::string operator/(const std::string& f) const { return (path_ / f).string(); }

private:
    std::filesystem::path path_;
};

inline Grid random_grid(int h, int w, RandomStream& rng, double lo = 0.0, double hi = 1.0) {
    Grid g(h, w);
    for (auto& v : g.data) v = rng.uniform(lo, hi);
    return g;
}

}  // namespace dff::testing
