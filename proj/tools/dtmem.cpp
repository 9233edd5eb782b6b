// dtmem: data generation, training, fine-tuning, and evaluation for the
// memory-augmented decision transformer on the gridworld suite.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dtmem/eval.hpp"
#include "dtmem/model.hpp"
#include "dtmem/plot.hpp"
#include "dtmem/run_config.hpp"
#include "dtmem/tasks.hpp"
#include "dtmem/train.hpp"

namespace fs = std::filesystem;
using namespace dtmem;

namespace {

struct ConfigCli {
    std::string config_file;
    std::string profile = "desk";
    std::vector<std::string> overrides;
    bool seed_set = false;
    std::uint64_t seed = 0;
};

void add_config_options(CLI::App* cmd, ConfigCli& cc) {
    cmd->add_option("--config", cc.config_file, "JSON config file (flat dotted keys)");
    cmd->add_option("--profile", cc.profile, "Config profile: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--set", cc.overrides, "Override a config key, key=value (repeatable)");
    cmd->add_option("--seed", cc.seed, "Seed for model init and training")
        ->each([&cc](const std::string&) { cc.seed_set = true; });
}

RunConfig resolve_config(const ConfigCli& cc) {
    RunConfig cfg;
    if (!cc.config_file.empty()) cfg = RunConfig::load_file(cc.config_file);
    if (cc.profile == "paper") cfg.apply_paper_profile();
    std::string joined;
    for (const std::string& o : cc.overrides) {
        apply_override(cfg, o);
        joined += (joined.empty() ? "" : " ") + o;
    }
    if (cc.seed_set) cfg.seed = cc.seed;
    if (const char* env = std::getenv("DTMEM_SEED")) {
        cfg.seed = std::stoull(env);
        joined += (joined.empty() ? "" : " ") + std::string("DTMEM_SEED=") + env;
    }
    cfg.provenance_overrides = joined;
    cfg.finalize();
    return cfg;
}

std::string task_data_path(const std::string& dir, const std::string& task_id) {
    return (fs::path(dir) / (task_id + ".jsonl")).string();
}

std::vector<TaskSpec> load_dir_suite(const std::string& dir) {
    return load_suite((fs::path(dir) / "suite.json").string());
}

Model load_model(const std::string& ckpt_path, Checkpoint& ck, RunConfig& cfg) {
    ck = Checkpoint::load(ckpt_path);
    cfg = RunConfig::from_flat_json(ck.config);
    cfg.finalize();
    Model model(cfg.model, cfg.seed);
    model.import_tensors(ck, cfg.lora);
    return model;
}

Checkpoint assemble_checkpoint(const Model& model, const RunConfig& cfg, const AdamW* opt,
                               const Rng* rng) {
    Checkpoint out;
    out.config = cfg.to_flat_json();
    model.export_tensors(out);
    if (opt) opt->export_state(out);
    if (rng) out.config["train.rng_state"] = rng->save_state();
    return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const ConfigCli& cc, const std::string& out_dir, int total_tasks,
                 bool test_only) {
    RunConfig cfg = resolve_config(cc);
    if (total_tasks > 0) {
        if (total_tasks <= cfg.suite.test_tasks) {
            cfg.suite.train_tasks = total_tasks;
            cfg.suite.test_tasks = 0;
        } else {
            cfg.suite.train_tasks = total_tasks - cfg.suite.test_tasks;
        }
    }
    cfg.finalize();
    fs::create_directories(out_dir);

    const TaskFamily family = family_from_name(cfg.suite.family);
    const std::vector<TaskSpec> tasks =
        default_suite(family, cfg.suite.seed, cfg.suite.train_tasks, cfg.suite.test_tasks,
                      cfg.suite.grid_size);
    const nlohmann::json echo = cfg.to_flat_json();
    save_suite(tasks, (fs::path(out_dir) / "suite.json").string(), echo);

    const auto ft_episodes = static_cast<std::int64_t>(
        std::max(1.0, std::floor(static_cast<double>(cfg.suite.episodes) *
                                 cfg.suite.finetune_fraction)));
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const TaskSpec& spec = tasks[i];
        if (test_only && spec.split != Split::Test) continue;
        const std::int64_t episodes =
            spec.split == Split::Test ? ft_episodes : cfg.suite.episodes;
        const DatasetManifest manifest =
            generate_dataset(spec, episodes, cfg.suite.epsilons,
                             cfg.suite.seed + static_cast<std::uint64_t>(i),
                             task_data_path(out_dir, spec.task_id), echo);
        std::cout << spec.task_id << (spec.split == Split::Test ? " [test]" : " [train]")
                  << ": " << manifest.episodes << " episodes, mean return "
                  << manifest.mean_return << ", max " << manifest.max_return << "\n";
    }
    std::cout << "suite written to " << out_dir << "\n";
    return 0;
}

std::vector<TaskDataset> load_split_datasets(const std::string& dir, const RunConfig& cfg,
                                             Split split) {
    std::vector<TaskDataset> out;
    std::vector<std::string> missing;
    for (const TaskSpec& spec : load_dir_suite(dir)) {
        if (spec.split != split) continue;
        const std::string path = task_data_path(dir, spec.task_id);
        if (!fs::exists(path)) {
            missing.push_back(spec.task_id);
            continue;
        }
        out.push_back(load_task_dataset(spec, path, cfg.model.backbone.context));
    }
    if (!missing.empty()) {
        std::string ids;
        for (const std::string& m : missing) ids += (ids.empty() ? "" : ", ") + m;
        throw IoError("missing datasets for task(s): " + ids);
    }
    return out;
}

int cmd_pretrain(const ConfigCli& cc, const std::string& data_dir, const std::string& out_path,
                 const std::string& metrics_path) {
    RunConfig cfg = resolve_config(cc);
    const std::vector<TaskDataset> tasks = load_split_datasets(data_dir, cfg, Split::Train);
    if (tasks.empty()) throw ContractError("pretrain: no TRAIN datasets under " + data_dir);
    std::cout << "pretraining on " << tasks.size() << " tasks, "
              << cfg.train.epochs * cfg.train.steps_per_epoch * static_cast<int>(tasks.size())
              << " optimizer steps\n";

    Model model(cfg.model, cfg.seed);
    AdamW opt(model.trainable_params(), cfg.train);
    Rng rng(cfg.train.seed ^ cfg.seed);
    const TrainRunStats stats = pretrain(model, tasks, cfg.train, metrics_path, &rng, &opt);

    Checkpoint ck = assemble_checkpoint(model, cfg, &opt, &rng);
    ck.save(out_path);
    std::cout << "steps " << stats.steps << ", first loss " << stats.first_loss
              << ", last loss " << stats.last_loss << "\n";
    std::cout << "checkpoint written to " << out_path << "\n";
    return 0;
}

int cmd_finetune(const ConfigCli& cc, const std::string& ckpt_path, const std::string& data_dir,
                 std::string task_id, int rank, double alpha, double lora_dropout, int steps,
                 const std::string& out_path, const std::string& metrics_path, bool merge) {
    Checkpoint ck;
    RunConfig cfg;
    Model model = load_model(ckpt_path, ck, cfg);
    for (const std::string& o : cc.overrides) apply_override(cfg, o);
    cfg.lora.rank = rank;
    cfg.lora.alpha = alpha;
    cfg.lora.dropout = lora_dropout;
    if (steps > 0) cfg.train.finetune_steps = steps;
    if (cc.seed_set) cfg.train.seed = cc.seed;
    cfg.finalize();

    std::vector<TaskDataset> test_tasks = load_split_datasets(data_dir, cfg, Split::Test);
    if (test_tasks.empty()) throw ContractError("finetune: no TEST datasets under " + data_dir);
    if (task_id.empty()) {
        if (test_tasks.size() > 1)
            throw ContractError("finetune: several TEST tasks available; pick one with --task");
        task_id = test_tasks[0].spec.task_id;
    }
    const TaskDataset* chosen = nullptr;
    for (const TaskDataset& t : test_tasks)
        if (t.spec.task_id == task_id) chosen = &t;
    if (!chosen) throw ContractError("finetune: task '" + task_id + "' not in the TEST split");

    std::cout << "fine-tuning on " << task_id << " for " << cfg.train.finetune_steps
              << " steps (rank " << rank << ", alpha " << alpha << ")\n";
    const TrainRunStats stats = finetune(model, *chosen, cfg.lora, cfg.train, metrics_path);
    const ParamCounts counts = model.counts();
    std::cout << "adapter parameters: " << counts.adapters << " ("
              << 100.0 * static_cast<double>(counts.adapters) /
                     static_cast<double>(counts.total())
              << "% of total)\n";
    if (merge) {
        model.merge_lora();
        std::cout << "adapters merged into dense weights\n";
    }

    Checkpoint out = assemble_checkpoint(model, cfg, nullptr, nullptr);
    out.config["finetune.task"] = task_id;
    out.save(out_path);
    std::cout << "steps " << stats.steps << ", first loss " << stats.first_loss
              << ", last loss " << stats.last_loss << "\n";
    std::cout << "checkpoint written to " << out_path << "\n";
    return 0;
}

int cmd_eval(const ConfigCli& cc, const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split_sel, const std::string& out_path, std::string raw_path,
             int runs, int persist_flag) {
    Checkpoint ck;
    RunConfig cfg;
    Model model = load_model(ckpt_path, ck, cfg);
    for (const std::string& o : cc.overrides) apply_override(cfg, o);
    if (runs > 0) cfg.eval.runs = runs;
    if (persist_flag >= 0) cfg.eval.persist_memory = persist_flag != 0;
    cfg.finalize();

    std::vector<TaskSpec> tasks;
    std::vector<DatasetManifest> manifests;
    for (const TaskSpec& spec : load_dir_suite(data_dir)) {
        if (split_sel == "train" && spec.split != Split::Train) continue;
        if (split_sel == "test" && spec.split != Split::Test) continue;
        tasks.push_back(spec);
        manifests.push_back(
            DatasetManifest::load(manifest_path_for(task_data_path(data_dir, spec.task_id))));
    }
    if (tasks.empty()) throw ContractError("eval: no tasks selected");

    EvalReport report = evaluate_suite(model, tasks, manifests, cfg.eval);
    report.config = cfg.to_flat_json();
    report.config["eval.checkpoint"] = ckpt_path;
    report.save(out_path);
    if (raw_path.empty()) raw_path = out_path + ".raw.csv";
    report.save_raw_csv(raw_path);

    for (const TaskEvalResult& t : report.tasks)
        std::cout << t.task_id << (t.split == Split::Test ? " [test]" : " [train]")
                  << ": average " << t.average << ", top3 " << t.top3 << ", normalized "
                  << t.optimal_normalized << ", rel-imp " << t.rel_improvement << "%\n";
    std::cout << "report written to " << out_path << " (raw returns: " << raw_path << ")\n";
    return 0;
}

int cmd_sweep(const ConfigCli& cc, const std::string& data_dir, const std::string& slots_csv,
              const std::string& task_id, int budget, const std::string& out_path) {
    RunConfig cfg = resolve_config(cc);
    std::vector<int> slot_counts;
    std::stringstream ss(slots_csv);
    std::string item;
    while (std::getline(ss, item, ',')) slot_counts.push_back(std::stoi(item));
    if (slot_counts.empty()) throw ContractError("sweep: provide slot counts as N,N,...");

    std::vector<TaskDataset> tasks = load_split_datasets(data_dir, cfg, Split::Train);
    if (tasks.empty()) throw ContractError("sweep: no TRAIN datasets under " + data_dir);
    const TaskDataset* chosen = &tasks[0];
    if (!task_id.empty()) {
        chosen = nullptr;
        for (const TaskDataset& t : tasks)
            if (t.spec.task_id == task_id) chosen = &t;
        if (!chosen) throw ContractError("sweep: task '" + task_id + "' not found");
    }

    TrainConfig tc = cfg.train;
    if (budget > 0) {
        tc.epochs = 1;
        tc.steps_per_epoch = budget;
    }
    std::cout << "sweep over slots {" << slots_csv << "}, " << tc.epochs * tc.steps_per_epoch
              << " steps each, task " << chosen->spec.task_id << "\n";

    SweepReport report = memory_sweep(slot_counts, cfg.model, tc, cfg.eval, *chosen, cfg.seed);
    report.config = cfg.to_flat_json();
    report.save(out_path);
    for (const SweepRow& r : report.rows)
        std::cout << "slots " << r.slots << ": average " << r.average << ", top3 " << r.top3
                  << "\n";
    std::cout << "sweep report written to " << out_path << "\n";
    return 0;
}

int cmd_plot(const std::vector<std::string>& reports, std::vector<std::string> labels,
             const std::string& out_dir) {
    if (reports.empty()) throw ContractError("plot: at least one --report required");
    fs::create_directories(out_dir);
    while (labels.size() < reports.size())
        labels.push_back("model-" + std::to_string(labels.size() + 1));

    std::vector<nlohmann::json> docs;
    for (const std::string& p : reports) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("cannot open report '" + p + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("report '" + p + "': " + e.what());
        }
        docs.push_back(std::move(j));
    }

    int emitted = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (docs[i].value("type", "") != "sweep_report") continue;
        std::vector<double> xs, ys;
        for (const auto& row : docs[i]["rows"]) {
            xs.push_back(row["slots"].get<double>());
            ys.push_back(row["average"].get<double>());
        }
        const std::string path = (fs::path(out_dir) / "memory_sweep.svg").string();
        svg::line_chart(path, "Average return vs memory slots", xs, ys, "memory slots",
                        "average return");
        std::cout << "wrote " << path << "\n";
        ++emitted;
    }

    std::vector<const nlohmann::json*> evals;
    std::vector<std::string> eval_labels;
    for (std::size_t i = 0; i < docs.size(); ++i)
        if (docs[i].value("type", "") == "eval_report") {
            evals.push_back(&docs[i]);
            eval_labels.push_back(labels[i]);
        }
    if (!evals.empty()) {
        std::vector<std::string> categories;
        for (const auto& t : (*evals[0])["tasks"])
            categories.push_back(t["task_id"].get<std::string>());
        auto series_for = [&](const std::string& field) {
            std::vector<svg::Series> series;
            for (std::size_t e = 0; e < evals.size(); ++e) {
                svg::Series s;
                s.name = eval_labels[e];
                for (const std::string& cat : categories) {
                    double v = 0.0;
                    for (const auto& t : (*evals[e])["tasks"])
                        if (t["task_id"] == cat) v = t[field].get<double>();
                    s.values.push_back(v);
                }
                series.push_back(std::move(s));
            }
            return series;
        };
        const std::string p1 = (fs::path(out_dir) / "normalized_average.svg").string();
        svg::bar_chart(p1, "Normalized average return (0 = random, 1 = optimal)", categories,
                       series_for("optimal_normalized"));
        std::cout << "wrote " << p1 << "\n";
        const std::string p2 = (fs::path(out_dir) / "raw_average.svg").string();
        svg::bar_chart(p2, "Average episode return", categories, series_for("average"));
        std::cout << "wrote " << p2 << "\n";
        emitted += 2;
    }
    if (emitted == 0) throw ContractError("plot: no eval_report or sweep_report inputs");
    return 0;
}

int cmd_info(const ConfigCli& cc, bool as_json) {
    RunConfig cfg = resolve_config(cc);
    ParamCounts counts;
    for (const ParamSpecEntry& e : model_layout(cfg.model)) {
        const std::int64_t n = numel(e.shape);
        if (e.path.rfind("memory.", 0) == 0)
            counts.memory += n;
        else if (e.path.rfind("heads.", 0) == 0)
            counts.heads += n;
        else
            counts.backbone += n;
    }
    counts.adapters =
        5 * (static_cast<std::int64_t>(cfg.model.backbone.hidden) * cfg.lora.rank * 2);
    const double total = static_cast<double>(counts.total());
    auto pct = [&](std::int64_t n) { return 100.0 * static_cast<double>(n) / total; };

    if (as_json) {
        nlohmann::json j;
        j["backbone"] = counts.backbone;
        j["memory"] = counts.memory;
        j["heads"] = counts.heads;
        j["adapters"] = counts.adapters;
        j["total"] = counts.total();
        j["adapter_percent"] = pct(counts.adapters);
        j["lora.rank"] = cfg.lora.rank;
        j["config"] = cfg.to_flat_json();
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    std::printf("profile: %s\n", cc.profile.c_str());
    std::printf("%-10s %12s %8s\n", "module", "params", "share");
    std::printf("%-10s %12lld %7.2f%%\n", "backbone", static_cast<long long>(counts.backbone),
                pct(counts.backbone));
    std::printf("%-10s %12lld %7.2f%%\n", "memory", static_cast<long long>(counts.memory),
                pct(counts.memory));
    std::printf("%-10s %12lld %7.2f%%\n", "heads", static_cast<long long>(counts.heads),
                pct(counts.heads));
    std::printf("%-10s %12lld %7.2f%%  (rank %d on the five memory projections)\n", "adapters",
                static_cast<long long>(counts.adapters), pct(counts.adapters), cfg.lora.rank);
    std::printf("%-10s %12lld\n", "total", static_cast<long long>(counts.total()));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"memory-augmented decision transformer toolchain"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate offline gridworld datasets");
    ConfigCli gen_cc;
    add_config_options(gen, gen_cc);
    std::string gen_family, gen_out = "data";
    int gen_tasks = 0;
    std::int64_t gen_episodes = 0;
    bool gen_test_only = false;
    gen->add_option("--family", gen_family, "Task family: GRID_NAV or GRID_KEYDOOR");
    gen->add_option("--tasks", gen_tasks, "Total task count (last suite.test_tasks are TEST)");
    gen->add_option("--episodes", gen_episodes, "Episodes per TRAIN task");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_flag("--test-only", gen_test_only, "Regenerate only the TEST datasets");

    auto* pre = app.add_subcommand("pretrain", "Pre-train on the TRAIN task datasets");
    ConfigCli pre_cc;
    add_config_options(pre, pre_cc);
    std::string pre_data, pre_out = "model.ckpt.json", pre_metrics;
    pre->add_option("--data", pre_data, "Dataset directory from gen-data")->required();
    pre->add_option("--out", pre_out, "Checkpoint output path");
    pre->add_option("--metrics", pre_metrics, "Per-step metrics CSV path");

    auto* fin = app.add_subcommand("finetune", "LoRA fine-tune the memory on one TEST task");
    ConfigCli fin_cc;
    add_config_options(fin, fin_cc);
    std::string fin_ckpt, fin_data, fin_task, fin_out = "model_ft.ckpt.json", fin_metrics;
    int fin_rank = 4, fin_steps = 0;
    double fin_alpha = 8.0, fin_dropout = 0.0;
    bool fin_merge = false;
    fin->add_option("--ckpt", fin_ckpt, "Pre-trained checkpoint")->required();
    fin->add_option("--data", fin_data, "Dataset directory")->required();
    fin->add_option("--task", fin_task, "TEST task id (required when several exist)");
    fin->add_option("--rank", fin_rank, "LoRA rank");
    fin->add_option("--alpha", fin_alpha, "LoRA alpha scaling");
    fin->add_option("--lora-dropout", fin_dropout, "LoRA dropout");
    fin->add_option("--steps", fin_steps, "Fine-tune optimizer steps");
    fin->add_option("--out", fin_out, "Checkpoint output path");
    fin->add_option("--metrics", fin_metrics, "Per-step metrics CSV path");
    fin->add_flag("--merge", fin_merge, "Export merged dense weights instead of adapters");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint with the 16-seed protocol");
    ConfigCli ev_cc;
    add_config_options(ev, ev_cc);
    std::string ev_ckpt, ev_data, ev_split = "test", ev_out = "report.json", ev_raw;
    int ev_runs = 0, ev_persist = -1;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint to evaluate")->required();
    ev->add_option("--data", ev_data, "Dataset directory (for targets and anchors)")->required();
    ev->add_option("--tasks", ev_split, "Which tasks: train, test, or all")
        ->check(CLI::IsMember({"train", "test", "all"}));
    ev->add_option("--out", ev_out, "Report JSON path");
    ev->add_option("--raw", ev_raw, "Raw per-rollout returns CSV path");
    ev->add_option("--runs", ev_runs, "Rollouts per task (default 16)");
    ev->add_flag("--persist-memory", [&ev_persist](std::int64_t) { ev_persist = 1; },
                 "Carry memory across context windows within an episode (default)");
    ev->add_flag("--no-persist-memory", [&ev_persist](std::int64_t) { ev_persist = 0; },
                 "Reset memory to M0 for every context window");

    auto* sw = app.add_subcommand("sweep", "Train and evaluate across memory sizes");
    ConfigCli sw_cc;
    add_config_options(sw, sw_cc);
    std::string sw_data, sw_slots = "4,16,64", sw_task, sw_out = "sweep.json";
    int sw_budget = 5000;
    sw->add_option("--data", sw_data, "Dataset directory")->required();
    sw->add_option("--slots", sw_slots, "Comma-separated slot counts");
    sw->add_option("--task", sw_task, "TRAIN task id (default: first)");
    sw->add_option("--steps", sw_budget, "Training steps per slot count");
    sw->add_option("--out", sw_out, "Sweep report JSON path");

    auto* pl = app.add_subcommand("plot", "Render SVG charts from reports");
    std::vector<std::string> pl_reports, pl_labels;
    std::string pl_out = "plots";
    pl->add_option("--report", pl_reports, "Report JSON (repeatable)")->required();
    pl->add_option("--label", pl_labels, "Series label per report (repeatable)");
    pl->add_option("--out", pl_out, "Output directory");

    auto* in = app.add_subcommand("info", "Print parameter counts per module");
    ConfigCli in_cc;
    add_config_options(in, in_cc);
    bool in_json = false;
    in->add_flag("--json", in_json, "Machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) {
            if (!gen_family.empty())
                gen_cc.overrides.insert(gen_cc.overrides.begin(),
                                        "suite.family=\"" + gen_family + "\"");
            if (gen_episodes > 0)
                gen_cc.overrides.push_back("suite.episodes=" + std::to_string(gen_episodes));
            return cmd_gen_data(gen_cc, gen_out, gen_tasks, gen_test_only);
        }
        if (pre->parsed()) return cmd_pretrain(pre_cc, pre_data, pre_out, pre_metrics);
        if (fin->parsed())
            return cmd_finetune(fin_cc, fin_ckpt, fin_data, fin_task, fin_rank, fin_alpha,
                                fin_dropout, fin_steps, fin_out, fin_metrics, fin_merge);
        if (ev->parsed())
            return cmd_eval(ev_cc, ev_ckpt, ev_data, ev_split, ev_out, ev_raw, ev_runs,
                            ev_persist);
        if (sw->parsed()) return cmd_sweep(sw_cc, sw_data, sw_slots, sw_task, sw_budget, sw_out);
        if (pl->parsed()) return cmd_plot(pl_reports, pl_labels, pl_out);
        if (in->parsed()) return cmd_info(in_cc, in_json);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
