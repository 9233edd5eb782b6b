#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtmem/common.hpp"

namespace dtmem {

// One episode of (state, action, reward), all sequences the same length.
struct Trajectory {
    std::string task_id;
    std::vector<std::vector<double>> states;
    std::vector<std::uint32_t> actions;
    std::vector<double> rewards;

    std::int64_t length() const { return static_cast<std::int64_t>(states.size()); }

    void validate() const {
        if (states.empty()) throw ContractError("trajectory: empty episode");
        if (actions.size() != states.size() || rewards.size() != states.size())
            throw ContractError("trajectory: states/actions/rewards lengths differ (" +
                                std::to_string(states.size()) + "/" +
                                std::to_string(actions.size()) + "/" +
                                std::to_string(rewards.size()) + ")");
        for (const auto& s : states)
            if (s.size() != states.front().size())
                throw ContractError("trajectory: ragged state vectors");
    }

    double total_return() const {
        double acc = 0.0;
        for (auto it = rewards.rbegin(); it != rewards.rend(); ++it) acc += *it;
        return acc;
    }
};

// A K-step window with return-to-go annotations. Padded tail positions are
// flagged and must be excluded from the loss.
struct Segment {
    std::vector<double> rtg;
    std::vector<std::vector<double>> states;
    std::vector<std::uint32_t> actions;
    std::vector<double> rewards;
    std::vector<std::int64_t> timesteps;
    std::vector<bool> pad;

    std::int64_t length() const { return static_cast<std::int64_t>(rtg.size()); }

    std::int64_t unpadded_count() const {
        std::int64_t n = 0;
        for (bool p : pad)
            if (!p) ++n;
        return n;
    }
};

// Suffix sums of rewards, undiscounted: rtg[t] = rtg[t+1] + rewards[t],
// evaluated from the episode tail so the recurrence holds as an exact
// floating-point identity.
inline std::vector<double> return_to_go(const Trajectory& traj) {
    traj.validate();
    const std::int64_t h = traj.length();
    std::vector<double> rtg(static_cast<std::size_t>(h));
    double acc = 0.0;
    for (std::int64_t t = h - 1; t >= 0; --t) {
        acc += traj.rewards[static_cast<std::size_t>(t)];
        rtg[static_cast<std::size_t>(t)] = acc;
    }
    return rtg;
}

// Non-overlapping K-step windows covering the episode; the last window is
// right-padded with zero state/action/rtg and pad = true.
inline std::vector<Segment> segment(const Trajectory& traj, std::int64_t k) {
    if (k < 1) throw ContractError("segment: K must be >= 1, got " + std::to_string(k));
    traj.validate();
    const std::vector<double> rtg = return_to_go(traj);
    const std::int64_t h = traj.length();
    const std::size_t state_dim = traj.states.front().size();

    std::vector<Segment> out;
    for (std::int64_t start = 0; start < h; start += k) {
        Segment seg;
        seg.rtg.reserve(static_cast<std::size_t>(k));
        for (std::int64_t i = 0; i < k; ++i) {
            const std::int64_t t = start + i;
            if (t < h) {
                seg.rtg.push_back(rtg[static_cast<std::size_t>(t)]);
                seg.states.push_back(traj.states[static_cast<std::size_t>(t)]);
                seg.actions.push_back(traj.actions[static_cast<std::size_t>(t)]);
                seg.rewards.push_back(traj.rewards[static_cast<std::size_t>(t)]);
                seg.timesteps.push_back(t);
                seg.pad.push_back(false);
            } else {
                seg.rtg.push_back(0.0);
                seg.states.emplace_back(state_dim, 0.0);
                seg.actions.push_back(0);
                seg.rewards.push_back(0.0);
                seg.timesteps.push_back(t);
                seg.pad.push_back(true);
            }
        }
        out.push_back(std::move(seg));
    }
    return out;
}

// Summary record written next to each dataset file.
struct DatasetManifest {
    static constexpr int kFormatVersion = 1;

    std::string task_id;
    std::int64_t episodes = 0;
    std::string source_policy;
    std::string data_path;
    double mean_return = 0.0;
    double max_return = 0.0;
    nlohmann::json config = nlohmann::json::object();

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format_version"] = kFormatVersion;
        j["task_id"] = task_id;
        j["episodes"] = episodes;
        j["source_policy"] = source_policy;
        j["data_path"] = data_path;
        j["mean_return"] = mean_return;
        j["max_return"] = max_return;
        j["config"] = config;
        return j;
    }

    static DatasetManifest from_json(const nlohmann::json& j) {
        if (!j.contains("format_version") || j["format_version"].get<int>() != kFormatVersion)
            throw FormatError("manifest: missing or unsupported format_version");
        DatasetManifest m;
        m.task_id = j.at("task_id").get<std::string>();
        m.episodes = j.at("episodes").get<std::int64_t>();
        m.source_policy = j.value("source_policy", std::string());
        m.data_path = j.value("data_path", std::string());
        m.mean_return = j.at("mean_return").get<double>();
        m.max_return = j.at("max_return").get<double>();
        m.config = j.value("config", nlohmann::json::object());
        return m;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out << to_json().dump(2) << "\n";
        if (!out) throw IoError("write failed for '" + path + "'");
    }

    static DatasetManifest load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("manifest '" + path + "': " + e.what());
        }
        return from_json(j);
    }
};

inline std::string manifest_path_for(const std::string& data_path) {
    const std::string suffix = ".jsonl";
    if (data_path.size() > suffix.size() &&
        data_path.compare(data_path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return data_path.substr(0, data_path.size() - suffix.size()) + ".manifest.json";
    return data_path + ".manifest.json";
}

// JSON Lines, one episode per line. Doubles round-trip bit-exactly through
// the shortest-representation formatting, so write(read(write(x))) is
// byte-identical to write(x).
inline DatasetManifest write_dataset(const std::vector<Trajectory>& trajs,
                                     const std::string& path,
                                     const std::string& source_policy = "",
                                     const nlohmann::json& config = nlohmann::json::object()) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");

    DatasetManifest manifest;
    manifest.data_path = path;
    manifest.source_policy = source_policy;
    manifest.config = config;
    manifest.episodes = static_cast<std::int64_t>(trajs.size());

    double sum_ret = 0.0;
    for (const Trajectory& traj : trajs) {
        traj.validate();
        for (double r : traj.rewards)
            if (!std::isfinite(r)) throw ContractError("write_dataset: non-finite reward");
        if (manifest.task_id.empty()) manifest.task_id = traj.task_id;
        nlohmann::json j;
        j["task_id"] = traj.task_id;
        j["states"] = traj.states;
        j["actions"] = traj.actions;
        j["rewards"] = traj.rewards;
        out << j.dump() << "\n";
        sum_ret += traj.total_return();
    }
    if (!trajs.empty()) {
        manifest.mean_return = sum_ret / static_cast<double>(trajs.size());
        manifest.max_return = trajs.front().total_return();
        for (const Trajectory& traj : trajs)
            manifest.max_return = std::max(manifest.max_return, traj.total_return());
    }
    if (!out) throw IoError("write failed for '" + path + "'");
    out.close();

    manifest.save(manifest_path_for(path));
    return manifest;
}

inline std::vector<Trajectory> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<Trajectory> out;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            Trajectory traj;
            traj.task_id = j.at("task_id").get<std::string>();
            traj.states = j.at("states").get<std::vector<std::vector<double>>>();
            traj.actions = j.at("actions").get<std::vector<std::uint32_t>>();
            traj.rewards = j.at("rewards").get<std::vector<double>>();
            traj.validate();
            out.push_back(std::move(traj));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const ContractError& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace dtmem
