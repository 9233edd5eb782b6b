#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtmem/common.hpp"
#include "dtmem/rng.hpp"
#include "dtmem/trajectory.hpp"

namespace dtmem {

enum class TaskFamily { GridNav, GridKeyDoor };
enum class Dynamics { Standard, Slippery };
enum class Split { Train, Test };

inline std::string family_name(TaskFamily f) {
    return f == TaskFamily::GridNav ? "GRID_NAV" : "GRID_KEYDOOR";
}

inline TaskFamily family_from_name(const std::string& s) {
    if (s == "GRID_NAV") return TaskFamily::GridNav;
    if (s == "GRID_KEYDOOR") return TaskFamily::GridKeyDoor;
    throw ContractError("unknown task family '" + s + "'");
}

struct Coord {
    int row = 0;
    int col = 0;
    bool operator==(const Coord&) const = default;
};

// Actions are UP, DOWN, LEFT, RIGHT in index order 0..3.
inline constexpr int kActionCount = 4;
inline constexpr std::array<Coord, kActionCount> kMoves{
    Coord{-1, 0}, Coord{1, 0}, Coord{0, -1}, Coord{0, 1}};

// A gridworld task instance. GRID_NAV: reach the goal. GRID_KEYDOOR: fetch
// the key first, then the goal pays out. Both families share the state and
// action spaces, so one model can drive either.
struct TaskSpec {
    TaskFamily family = TaskFamily::GridNav;
    std::string task_id;
    int grid_size = 7;
    Coord start_pos;
    Coord goal_pos;
    std::optional<Coord> key_pos;
    double step_penalty = -0.05;
    double goal_reward = 1.0;
    Dynamics dynamics = Dynamics::Standard;
    double slip_prob = 0.0;
    Split split = Split::Train;
    double gamma = 0.99;  // part of the MDP tuple; unused by the training objective

    int state_dim() const { return grid_size * grid_size + 2; }
    int step_limit() const { return 4 * grid_size * grid_size; }

    int cell_index(Coord c) const { return c.row * grid_size + c.col; }

    bool in_grid(Coord c) const {
        return c.row >= 0 && c.row < grid_size && c.col >= 0 && c.col < grid_size;
    }

    void validate() const {
        if (!(in_grid(start_pos) && in_grid(goal_pos)))
            throw ContractError("task '" + task_id + "': positions outside grid");
        if (start_pos == goal_pos)
            throw ContractError("task '" + task_id + "': goal equals start");
        if (family == TaskFamily::GridKeyDoor && !key_pos)
            throw ContractError("task '" + task_id + "': key-door task without key");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["family"] = family_name(family);
        j["task_id"] = task_id;
        j["grid_size"] = grid_size;
        j["start"] = {start_pos.row, start_pos.col};
        j["goal"] = {goal_pos.row, goal_pos.col};
        if (key_pos) j["key"] = {key_pos->row, key_pos->col};
        j["step_penalty"] = step_penalty;
        j["goal_reward"] = goal_reward;
        j["dynamics"] = dynamics == Dynamics::Standard ? "STANDARD" : "SLIPPERY";
        j["slip_prob"] = slip_prob;
        j["split"] = split == Split::Train ? "TRAIN" : "TEST";
        j["gamma"] = gamma;
        return j;
    }

    static TaskSpec from_json(const nlohmann::json& j) {
        TaskSpec s;
        s.family = family_from_name(j.at("family").get<std::string>());
        s.task_id = j.at("task_id").get<std::string>();
        s.grid_size = j.at("grid_size").get<int>();
        s.start_pos = {j.at("start")[0].get<int>(), j.at("start")[1].get<int>()};
        s.goal_pos = {j.at("goal")[0].get<int>(), j.at("goal")[1].get<int>()};
        if (j.contains("key")) s.key_pos = Coord{j["key"][0].get<int>(), j["key"][1].get<int>()};
        s.step_penalty = j.at("step_penalty").get<double>();
        s.goal_reward = j.at("goal_reward").get<double>();
        s.dynamics = j.at("dynamics").get<std::string>() == "SLIPPERY" ? Dynamics::Slippery
                                                                       : Dynamics::Standard;
        s.slip_prob = j.value("slip_prob", 0.0);
        s.split = j.at("split").get<std::string>() == "TEST" ? Split::Test : Split::Train;
        s.gamma = j.value("gamma", 0.99);
        s.validate();
        return s;
    }
};

struct EnvState {
    Coord agent;
    bool has_key = false;
    int steps_elapsed = 0;
    bool done = false;
};

inline EnvState reset_env(const TaskSpec& spec) {
    EnvState s;
    s.agent = spec.start_pos;
    return s;
}

struct StepResult {
    EnvState next;
    double reward = 0.0;
    bool done = false;
};

// One environment transition. SLIPPERY dynamics replace the intended move
// with a uniformly random one with probability slip_prob.
inline StepResult step(const TaskSpec& spec, const EnvState& state, int action, Rng& rng) {
    if (state.done) throw ContractError("step: episode already done");
    if (action < 0 || action >= kActionCount)
        throw ContractError("step: action " + std::to_string(action) + " outside {0..3}");

    int executed = action;
    if (spec.dynamics == Dynamics::Slippery && rng.uniform() < spec.slip_prob)
        executed = static_cast<int>(rng.uniform_int(kActionCount));

    StepResult res;
    res.next = state;
    Coord target{state.agent.row + kMoves[static_cast<std::size_t>(executed)].row,
                 state.agent.col + kMoves[static_cast<std::size_t>(executed)].col};
    if (spec.in_grid(target)) res.next.agent = target;
    res.next.steps_elapsed = state.steps_elapsed + 1;

    if (spec.family == TaskFamily::GridKeyDoor && !res.next.has_key &&
        res.next.agent == *spec.key_pos)
        res.next.has_key = true;

    const bool key_ok = spec.family != TaskFamily::GridKeyDoor || res.next.has_key;
    if (res.next.agent == spec.goal_pos && key_ok) {
        res.reward = spec.goal_reward;
        res.next.done = true;
    } else {
        res.reward = spec.step_penalty;
        if (res.next.steps_elapsed >= spec.step_limit()) res.next.done = true;
    }
    res.done = res.next.done;
    return res;
}

// One-hot agent cell, has_key bit, normalized step counter. Injective over
// reachable states and the same dimension for both families.
inline std::vector<double> encode_state(const TaskSpec& spec, const EnvState& state) {
    std::vector<double> v(static_cast<std::size_t>(spec.state_dim()), 0.0);
    v[static_cast<std::size_t>(spec.cell_index(state.agent))] = 1.0;
    v[static_cast<std::size_t>(spec.grid_size * spec.grid_size)] = state.has_key ? 1.0 : 0.0;
    v[static_cast<std::size_t>(spec.grid_size * spec.grid_size + 1)] =
        static_cast<double>(state.steps_elapsed) / static_cast<double>(spec.step_limit());
    return v;
}

// BFS distances from every cell to `target` on the open grid.
inline std::vector<int> bfs_distances(const TaskSpec& spec, Coord target) {
    const int n = spec.grid_size * spec.grid_size;
    std::vector<int> dist(static_cast<std::size_t>(n), -1);
    std::deque<Coord> queue;
    dist[static_cast<std::size_t>(spec.cell_index(target))] = 0;
    queue.push_back(target);
    while (!queue.empty()) {
        const Coord c = queue.front();
        queue.pop_front();
        for (const Coord& m : kMoves) {
            const Coord nb{c.row + m.row, c.col + m.col};
            if (!spec.in_grid(nb)) continue;
            auto& d = dist[static_cast<std::size_t>(spec.cell_index(nb))];
            if (d < 0) {
                d = dist[static_cast<std::size_t>(spec.cell_index(c))] + 1;
                queue.push_back(nb);
            }
        }
    }
    return dist;
}

inline Coord current_subgoal(const TaskSpec& spec, const EnvState& state) {
    if (spec.family == TaskFamily::GridKeyDoor && !state.has_key) return *spec.key_pos;
    return spec.goal_pos;
}

// Epsilon-mixed scripted policy: with probability 1-eps follow a BFS
// shortest path toward the current subgoal (lowest action index wins ties),
// otherwise act uniformly at random.
inline int behavior_policy(const TaskSpec& spec, const EnvState& state, double epsilon,
                           Rng& rng) {
    if (epsilon < 0.0 || epsilon > 1.0) throw ContractError("behavior_policy: epsilon in [0,1]");
    if (epsilon > 0.0 && rng.uniform() < epsilon)
        return static_cast<int>(rng.uniform_int(kActionCount));

    const Coord target = current_subgoal(spec, state);
    const std::vector<int> dist = bfs_distances(spec, target);
    int best_action = 0;
    int best_dist = dist[static_cast<std::size_t>(spec.cell_index(state.agent))];
    for (int a = 0; a < kActionCount; ++a) {
        const Coord nb{state.agent.row + kMoves[static_cast<std::size_t>(a)].row,
                       state.agent.col + kMoves[static_cast<std::size_t>(a)].col};
        if (!spec.in_grid(nb)) continue;
        const int d = dist[static_cast<std::size_t>(spec.cell_index(nb))];
        if (d < best_dist) {
            best_dist = d;
            best_action = a;
        }
    }
    return best_action;
}

// Exact best return under STANDARD dynamics: BFS path length with the goal
// step paying goal_reward and every other step the penalty.
inline double optimal_return(const TaskSpec& spec) {
    spec.validate();
    int path_len;
    if (spec.family == TaskFamily::GridKeyDoor) {
        const auto to_key = bfs_distances(spec, *spec.key_pos);
        const auto to_goal = bfs_distances(spec, spec.goal_pos);
        path_len = to_key[static_cast<std::size_t>(spec.cell_index(spec.start_pos))] +
                   to_goal[static_cast<std::size_t>(spec.cell_index(*spec.key_pos))];
    } else {
        const auto to_goal = bfs_distances(spec, spec.goal_pos);
        path_len = to_goal[static_cast<std::size_t>(spec.cell_index(spec.start_pos))];
    }
    return spec.goal_reward + static_cast<double>(path_len - 1) * spec.step_penalty;
}

namespace detail {

inline std::uint64_t mix_u64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e9b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_str(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace detail

// Deterministic task construction. Goal cells are spread over a fixed
// family-specific permutation of the non-start cells, so distinct seeds give
// distinct goals (up to grid_size^2 - 1 of them). Penalties and key cells
// come from a per-task rng.
inline TaskSpec make_task(TaskFamily family, const std::string& task_id, std::uint64_t seed,
                          int grid_size = 7) {
    if (grid_size < 3) throw ContractError("make_task: grid_size must be >= 3");
    TaskSpec spec;
    spec.family = family;
    spec.task_id = task_id;
    spec.grid_size = grid_size;
    spec.start_pos = {grid_size / 2, grid_size / 2};

    // Non-start cells in a family-keyed shuffled order.
    std::vector<Coord> cells;
    for (int r = 0; r < grid_size; ++r)
        for (int c = 0; c < grid_size; ++c)
            if (!(Coord{r, c} == spec.start_pos)) cells.push_back({r, c});
    Rng perm_rng(detail::hash_str(family_name(family)) ^ 0xa5a5a5a5ULL);
    for (std::size_t i = cells.size(); i > 1; --i)
        std::swap(cells[i - 1], cells[perm_rng.uniform_int(i)]);
    spec.goal_pos = cells[static_cast<std::size_t>(seed % cells.size())];

    Rng task_rng(detail::mix_u64(seed) ^ detail::hash_str(family_name(family) + "/" + task_id));
    static constexpr std::array<double, 3> kPenalties{-0.02, -0.05, -0.1};
    spec.step_penalty = kPenalties[task_rng.uniform_int(kPenalties.size())];
    spec.goal_reward = 1.0;

    if (family == TaskFamily::GridKeyDoor) {
        Coord key = spec.goal_pos;
        while (key == spec.goal_pos || key == spec.start_pos) {
            key = {static_cast<int>(task_rng.uniform_int(static_cast<std::uint64_t>(grid_size))),
                   static_cast<int>(task_rng.uniform_int(static_cast<std::uint64_t>(grid_size)))};
        }
        spec.key_pos = key;
    }

    // Trailing numeric suffix in the id fixes the split: 0..9 train, 10+ test.
    std::size_t digits = 0;
    while (digits < task_id.size() &&
           std::isdigit(static_cast<unsigned char>(task_id[task_id.size() - 1 - digits])))
        ++digits;
    if (digits > 0) {
        const int idx = std::stoi(task_id.substr(task_id.size() - digits));
        spec.split = idx >= 10 ? Split::Test : Split::Train;
    }

    spec.validate();
    return spec;
}

// The default desk suite: tasks t0..t11 of one family, seeds suite_seed+i,
// first 10 train and last 2 test. Train and test ids never overlap.
inline std::vector<TaskSpec> default_suite(TaskFamily family, std::uint64_t suite_seed,
                                           int train_tasks = 10, int test_tasks = 2,
                                           int grid_size = 7) {
    std::vector<TaskSpec> tasks;
    for (int i = 0; i < train_tasks + test_tasks; ++i) {
        TaskSpec spec = make_task(family, "t" + std::to_string(i), suite_seed + static_cast<std::uint64_t>(i),
                                  grid_size);
        spec.split = i < train_tasks ? Split::Train : Split::Test;
        tasks.push_back(std::move(spec));
    }
    return tasks;
}

// Runs `episodes` scripted episodes and returns them; epsilon is drawn per
// episode from `epsilon_choices`.
inline std::vector<Trajectory> rollout_behavior(const TaskSpec& spec, std::int64_t episodes,
                                                const std::vector<double>& epsilon_choices,
                                                std::uint64_t seed) {
    if (episodes < 1) throw ContractError("rollout_behavior: episodes must be >= 1");
    if (epsilon_choices.empty()) throw ContractError("rollout_behavior: empty epsilon schedule");
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(episodes));
    Rng rng(detail::mix_u64(seed) ^ detail::hash_str(spec.task_id));
    for (std::int64_t e = 0; e < episodes; ++e) {
        const double eps = epsilon_choices[rng.uniform_int(epsilon_choices.size())];
        Trajectory traj;
        traj.task_id = spec.task_id;
        EnvState state = reset_env(spec);
        while (!state.done) {
            const int action = behavior_policy(spec, state, eps, rng);
            traj.states.push_back(encode_state(spec, state));
            traj.actions.push_back(static_cast<std::uint32_t>(action));
            const StepResult res = step(spec, state, action, rng);
            traj.rewards.push_back(res.reward);
            state = res.next;
        }
        out.push_back(std::move(traj));
    }
    return out;
}

inline const std::vector<double>& default_epsilon_schedule() {
    static const std::vector<double> kSchedule{0.0, 0.3, 0.7};
    return kSchedule;
}

// Generates and writes one task's offline dataset (JSONL + manifest).
inline DatasetManifest generate_dataset(const TaskSpec& spec, std::int64_t episodes,
                                        const std::vector<double>& epsilon_choices,
                                        std::uint64_t seed, const std::string& path,
                                        const nlohmann::json& config = nlohmann::json::object()) {
    const std::vector<Trajectory> trajs = rollout_behavior(spec, episodes, epsilon_choices, seed);
    return write_dataset(trajs, path, "scripted-bfs-epsilon", config);
}

// Mean return of the uniform random policy, estimated by Monte Carlo.
struct RandomPolicyStats {
    double mean = 0.0;
    double stderr_mean = 0.0;
};

inline RandomPolicyStats random_policy_stats(const TaskSpec& spec, std::int64_t episodes,
                                             std::uint64_t seed) {
    Rng rng(detail::mix_u64(seed ^ 0x52414e44ULL) ^ detail::hash_str(spec.task_id));
    double sum = 0.0, sum_sq = 0.0;
    for (std::int64_t e = 0; e < episodes; ++e) {
        EnvState state = reset_env(spec);
        double ret = 0.0;
        while (!state.done) {
            const int action = static_cast<int>(rng.uniform_int(kActionCount));
            const StepResult res = step(spec, state, action, rng);
            ret += res.reward;
            state = res.next;
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    RandomPolicyStats stats;
    stats.mean = sum / static_cast<double>(episodes);
    const double var =
        std::max(0.0, sum_sq / static_cast<double>(episodes) - stats.mean * stats.mean);
    stats.stderr_mean = std::sqrt(var / static_cast<double>(episodes));
    return stats;
}

// Suite file: the task list written alongside generated datasets.
inline void save_suite(const std::vector<TaskSpec>& tasks, const std::string& path,
                       const nlohmann::json& config = nlohmann::json::object()) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["config"] = config;
    j["tasks"] = nlohmann::json::array();
    for (const TaskSpec& t : tasks) j["tasks"].push_back(t.to_json());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

inline std::vector<TaskSpec> load_suite(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("suite '" + path + "': " + e.what());
    }
    if (j.value("format_version", 0) != 1) throw FormatError("suite '" + path + "': bad version");
    std::vector<TaskSpec> tasks;
    for (const auto& t : j.at("tasks")) tasks.push_back(TaskSpec::from_json(t));
    return tasks;
}

}  // namespace dtmem
