#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

namespace miatest {

// Unique directory under the system temp root, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "case") {
        static std::atomic<int> counter{0};
        const int n = counter++;
        path_ = std::filesystem::temp_directory_path() /
                ("miabench-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(n));
        std::filesystem::create_directories(path_);
    }

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::filesystem::path& path() const { return path_; }

    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace miatest
