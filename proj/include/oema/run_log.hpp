#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>

#include "json.hpp"

namespace oema {

// Append-only JSONL event log. Entries carry no timestamps so that reruns
// of a deterministic pipeline produce identical logs.
class RunLog {
public:
    RunLog() = default;
    explicit RunLog(const std::filesystem::path& path) { open(path); }

    void open(const std::filesystem::path& path) {
        std::lock_guard<std::mutex> lock(mutex_);
        std::filesystem::create_directories(path.parent_path());
        out_.open(path, std::ios::binary | std::ios::trunc);
    }

    bool is_open() const { return out_.is_open(); }

    void write(const nlohmann::ordered_json& entry) {
        std::lock_guard<std::mutex> lock(mutex_);
        if (!out_.is_open()) return;
        out_ << entry.dump() << '\n';
        out_.flush();
    }

private:
    std::mutex mutex_;
    std::ofstream out_;
};

}  // namespace oema
