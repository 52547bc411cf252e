#pragma once

// Run manifest: stage completion flags, artifact paths, wall-clock seconds,
// and the config hash everything must agree on. JSON on disk, written
// atomically (temp + rename). A lock file serializes stages per run dir.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace betaspec {

struct StageRecord {
    bool done = false;
    double seconds = 0.0;
    std::vector<std::string> paths;
    std::string note;
};

class RunManifest {
public:
    std::string config_hash;
    std::map<std::string, StageRecord> stages;

    bool stage_done(const std::string& name) const {
        auto it = stages.find(name);
        return it != stages.end() && it->second.done;
    }

    void record(const std::string& name, double seconds, std::vector<std::string> paths,
                std::string note = "") {
        stages[name] = {true, seconds, std::move(paths), std::move(note)};
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["config_hash"] = config_hash;
        for (const auto& [name, rec] : stages) {
            j["stages"][name] = {{"done", rec.done},
                                 {"seconds", rec.seconds},
                                 {"paths", rec.paths},
                                 {"note", rec.note}};
        }
        return j;
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest m;
        m.config_hash = j.value("config_hash", "");
        if (j.contains("stages")) {
            for (auto it = j["stages"].begin(); it != j["stages"].end(); ++it) {
                StageRecord rec;
                rec.done = it.value().value("done", false);
                rec.seconds = it.value().value("seconds", 0.0);
                rec.paths = it.value().value("paths", std::vector<std::string>{});
                rec.note = it.value().value("note", "");
                m.stages[it.key()] = rec;
            }
        }
        return m;
    }

    void save(const std::string& path) const { atomic_write_json(path, to_json()); }

    static RunManifest load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("manifest: cannot open " + path);
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }

    static void atomic_write_json(const std::string& path, const nlohmann::json& j) {
        const std::string tmp = path + ".tmp";
        {
            std::ofstream out(tmp);
            if (!out) throw std::runtime_error("manifest: cannot open " + tmp);
            out << j.dump(2) << "\n";
            if (!out) throw std::runtime_error("manifest: write failed");
        }
        std::filesystem::rename(tmp, path);
    }
};

// One stage at a time per run directory.
class RunLock {
public:
    explicit RunLock(const std::string& run_dir) : path_(run_dir + "/.lock") {
        if (std::filesystem::exists(path_))
            throw std::runtime_error("run directory is locked by another stage: " + path_);
        std::ofstream out(path_);
        if (!out) throw std::runtime_error("cannot create lock file: " + path_);
        out << "locked\n";
    }
    ~RunLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::string path_;
};

class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace betaspec
