#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

std::string binary() {
    const char* bin = std::getenv("DTMEM_BIN");
    REQUIRE(bin != nullptr);
    return bin;
}

int run(const std::string& args, const std::string& log = "/dev/null") {
    const std::string cmd = binary() + " " + args + " > " + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

// micro-model flags shared by the pipeline smoke test
const std::string kMicro =
    "--set suite.grid_size=3 --set backbone.hidden=8 --set backbone.heads=2 "
    "--set backbone.layers=1 --set backbone.context=4 --set memory.slots=4 "
    "--set train.batch=4 --set eval.anchor_episodes=50";

}  // namespace

TEST_CASE("cli exit codes") {
    REQUIRE(run("") == 2);                       // no subcommand: usage
    REQUIRE(run("--definitely-not-a-flag") == 2);  // unknown flag: usage
    REQUIRE(run("info --set backbone.hidden=7") == 1);  // 7 % 4 heads fails validation
    REQUIRE(run("info") == 0);
    REQUIRE(run("--help") == 0);
}

TEST_CASE("info --json reports adapter accounting") {
    const std::string log = "cli_info.json";
    REQUIRE(run("info --json", log) == 0);
    std::ifstream in(log);
    nlohmann::json j;
    in >> j;
    REQUIRE(j["adapters"].get<long long>() == 2560);
    REQUIRE(j["adapter_percent"].get<double>() < 5.0);
    fs::remove(log);
}

TEST_CASE("pipeline smoke: gen-data, pretrain, finetune, eval, plot") {
    const std::string dir = "cli_pipeline_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    REQUIRE(run("gen-data --family GRID_NAV --tasks 3 --episodes 12 --out " + dir + "/data " +
                kMicro + " --set suite.test_tasks=1") == 0);
    REQUIRE(fs::exists(dir + "/data/suite.json"));
    REQUIRE(fs::exists(dir + "/data/t0.jsonl"));
    REQUIRE(fs::exists(dir + "/data/t0.manifest.json"));

    REQUIRE(run("pretrain --data " + dir + "/data " + kMicro +
                " --set train.epochs=1 --set train.steps_per_epoch=10 "
                "--out " + dir + "/m.ckpt.json --metrics " + dir + "/metrics.csv") == 0);
    REQUIRE(fs::exists(dir + "/m.ckpt.json"));
    {
        std::ifstream metrics(dir + "/metrics.csv");
        std::string header;
        std::getline(metrics, header);
        REQUIRE(header == "step,loss,action_acc,reward_acc,rtg_acc,wallclock");
    }

    REQUIRE(run("finetune --ckpt " + dir + "/m.ckpt.json --data " + dir +
                "/data --rank 2 --alpha 8 --steps 5 --out " + dir + "/ft.ckpt.json") == 0);
    REQUIRE(fs::exists(dir + "/ft.ckpt.json"));

    REQUIRE(run("eval --ckpt " + dir + "/m.ckpt.json --data " + dir +
                "/data --tasks test --runs 3 --out " + dir + "/report.json") == 0);
    REQUIRE(fs::exists(dir + "/report.json"));
    REQUIRE(fs::exists(dir + "/report.json.raw.csv"));

    REQUIRE(run("eval --ckpt " + dir + "/ft.ckpt.json --data " + dir +
                "/data --tasks test --runs 3 --out " + dir + "/report_ft.json") == 0);

    REQUIRE(run("plot --report " + dir + "/report.json --report " + dir +
                "/report_ft.json --label zero-shot --label fine-tuned --out " + dir +
                "/plots") == 0);
    REQUIRE(fs::exists(dir + "/plots/normalized_average.svg"));
    REQUIRE(fs::exists(dir + "/plots/raw_average.svg"));

    // every artifact embeds its config
    {
        std::ifstream in(dir + "/report.json");
        nlohmann::json j;
        in >> j;
        REQUIRE(j["config"].contains("backbone.hidden"));
        REQUIRE(j["config"]["backbone.hidden"].get<int>() == 8);
    }
    {
        std::ifstream in(dir + "/m.ckpt.json");
        nlohmann::json j;
        in >> j;
        REQUIRE(j["config"].contains("provenance.version"));
        REQUIRE(j["format_version"].get<int>() == 1);
    }

    fs::remove_all(dir);
}

TEST_CASE("DTMEM_SEED environment override reaches the config echo") {
    const std::string dir = "cli_seed_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cmd = "DTMEM_SEED=4242 " + binary() + " info --json > " + dir +
                            "/info.json 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    std::ifstream in(dir + "/info.json");
    nlohmann::json j;
    in >> j;
    REQUIRE(j["config"]["seed"].get<std::uint64_t>() == 4242);
    fs::remove_all(dir);
}
