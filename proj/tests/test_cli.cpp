#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>

#include <json.hpp>

#include "woodprune/model.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* env = std::getenv("WOODPRUNE_CLI");
    REQUIRE(env != nullptr);
    return env;
}

struct CliRun {
    int exit_code = -1;
    std::string output;
};

CliRun run_cli(const std::string& args, const fs::path& cwd) {
    const std::string log = (cwd / "cli_output.log").string();
    const std::string cmd = "cd '" + cwd.string() + "' && '" + cli_path() + "' " + args + " > '" +
                            log + "' 2>&1";
    const int status = std::system(cmd.c_str());
    CliRun run;
    run.exit_code = WEXITSTATUS(status);
    std::ifstream in(log);
    run.output.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return run;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string strip_timestamp(std::string text) {
    static const std::regex ts("\"generated_at\": \"[^\"]*\"");
    return std::regex_replace(text, ts, "\"generated_at\": \"X\"");
}

struct Workbench {
    fs::path dir;

    Workbench() : dir(fs::temp_directory_path() / "woodprune_cli_test") {
        fs::remove_all(dir);
        fs::create_directories(dir);
        // small synthetic dataset shared by the cases
        REQUIRE(run_cli("synth-data --classes 4 --per-class 60 --dim 36 --separation 2.5 --seed 9"
                        " --split train --images-out tr-img.idx --labels-out tr-lab.idx",
                        dir)
                    .exit_code == 0);
        REQUIRE(run_cli("synth-data --classes 4 --per-class 20 --dim 36 --separation 2.5 --seed 9"
                        " --split test --images-out te-img.idx --labels-out te-lab.idx",
                        dir)
                    .exit_code == 0);
    }
    ~Workbench() { fs::remove_all(dir); }

    std::string data_args() const {
        return "--train-images tr-img.idx --train-labels tr-lab.idx"
               " --test-images te-img.idx --test-labels te-lab.idx";
    }
};

const std::string kSmallFisher =
    " --fisher-subsample 6 --fisher-minibatch 4 --chunk-size 32 --damp 1e-5";

}  // namespace

TEST_CASE("cli end to end") {
    Workbench bench;
    const std::string data = bench.data_args();

    SECTION("train writes a checkpoint and metrics; epochs 0 equals initialization") {
        const auto run = run_cli("train " + data +
                                     " --layers 36,10,4 --epochs 3 --seed 7"
                                     " --checkpoint ck.json --metrics metrics.csv",
                                 bench.dir);
        REQUIRE(run.exit_code == 0);
        REQUIRE(fs::exists(bench.dir / "ck.json"));
        REQUIRE(fs::exists(bench.dir / "ck.bin"));
        const std::string metrics = read_file(bench.dir / "metrics.csv");
        REQUIRE(metrics.rfind("epoch,train_loss,test_acc,lr", 0) == 0);

        REQUIRE(run_cli("train " + data +
                            " --layers 36,10,4 --epochs 0 --seed 7 --checkpoint init.json",
                        bench.dir)
                    .exit_code == 0);
        const auto loaded = woodprune::load_checkpoint((bench.dir / "init.json").string());
        std::vector<std::size_t> sizes = {36, 10, 4};
        const auto fresh = woodprune::MlpModel::init(sizes, 7);
        REQUIRE(loaded.space().values == fresh.space().values);
    }

    SECTION("prune-oneshot magnitude hits the target and reports") {
        REQUIRE(run_cli("train " + data + " --layers 36,10,4 --epochs 3 --seed 7"
                            " --checkpoint ck.json",
                        bench.dir)
                    .exit_code == 0);
        const auto run = run_cli("prune-oneshot " + data + kSmallFisher +
                                     " --checkpoint ck.json --method magnitude --sparsity 0.5"
                                     " --seed 3 --report report.json --checkpoint-out pruned.json",
                                 bench.dir);
        REQUIRE(run.exit_code == 0);
        const auto report = nlohmann::json::parse(read_file(bench.dir / "report.json"));
        REQUIRE(report["method"] == "magnitude");
        REQUIRE(report["final_sparsity"].get<double>() == Catch::Approx(0.5).margin(0.01));
        REQUIRE(report.contains("per_layer"));
        REQUIRE(report["fisher"]["damp"].get<double>() == 1e-5);

        // bottom-|w| weights of the loaded checkpoint are exactly zero
        const auto pruned = woodprune::load_checkpoint((bench.dir / "pruned.json").string());
        std::size_t zeros = 0;
        for (std::size_t q = 0; q < pruned.dim(); ++q)
            zeros += (pruned.space().prunable[q] && pruned.space().values[q] == 0.0);
        const auto prunable = pruned.space().prunable_count();
        REQUIRE(zeros >= prunable / 2);
    }

    SECTION("determinism: same seed and varying threads give identical reports") {
        REQUIRE(run_cli("train " + data + " --layers 36,10,4 --epochs 2 --seed 7"
                            " --checkpoint ck.json",
                        bench.dir)
                    .exit_code == 0);
        const std::string common = "prune-oneshot " + data + kSmallFisher +
                                   " --checkpoint ck.json --method woodfisher --mode joint"
                                   " --sparsity 0.4 --seed 11 --report ";
        REQUIRE(run_cli(common + "r1.json", bench.dir).exit_code == 0);
        REQUIRE(run_cli(common + "r2.json", bench.dir).exit_code == 0);
        REQUIRE(run_cli("--threads 4 " + common + "r3.json", bench.dir).exit_code == 0);
        const auto r1 = strip_timestamp(read_file(bench.dir / "r1.json"));
        const auto r2 = strip_timestamp(read_file(bench.dir / "r2.json"));
        const auto r3 = strip_timestamp(read_file(bench.dir / "r3.json"));
        REQUIRE(r1 == r2);
        REQUIRE(r1 == r3);
    }

    SECTION("prune-gradual writes a deterministic trace") {
        REQUIRE(run_cli("train " + data + " --layers 36,10,4 --epochs 2 --seed 7"
                            " --checkpoint ck.json",
                        bench.dir)
                    .exit_code == 0);
        const std::string common = "prune-gradual " + data + kSmallFisher +
                                   " --checkpoint ck.json --method woodfisher --mode joint"
                                   " --final-sparsity 0.6 --total-epochs 6 --first-prune-epoch 1"
                                   " --prune-interval 2 --last-prune-epoch 5 --lr-decay-start 5"
                                   " --seed 13 --trace ";
        REQUIRE(run_cli(common + "t1.csv", bench.dir).exit_code == 0);
        REQUIRE(run_cli(common + "t2.csv", bench.dir).exit_code == 0);
        const auto t1 = read_file(bench.dir / "t1.csv");
        REQUIRE(t1 == read_file(bench.dir / "t2.csv"));
        REQUIRE(t1.rfind("epoch,sparsity,train_loss,test_acc,lr", 0) == 0);
        REQUIRE(std::count(t1.begin(), t1.end(), '\n') == 7);  // header + 6 epochs
    }

    SECTION("quad-scan emits the requested rows with exact t=0") {
        REQUIRE(run_cli("train " + data + " --layers 36,10,4 --epochs 2 --seed 7"
                            " --checkpoint ck.json",
                        bench.dir)
                    .exit_code == 0);
        const auto run = run_cli("quad-scan " + data + kSmallFisher +
                                     " --checkpoint ck.json --layer fc1.weight --sparsity 0.5"
                                     " --steps 21 --seed 3 --out scan.csv",
                                 bench.dir);
        REQUIRE(run.exit_code == 0);
        const auto csv = read_file(bench.dir / "scan.csv");
        REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 22);  // header + 21 rows
        // first data row: t=0 with actual == predicted
        std::istringstream lines(csv);
        std::string header, first;
        std::getline(lines, header);
        std::getline(lines, first);
        double t, actual, predicted;
        REQUIRE(std::sscanf(first.c_str(), "%lf,%lf,%lf", &t, &actual, &predicted) == 3);
        REQUIRE(t == 0.0);
        REQUIRE(actual == predicted);
    }

    SECTION("structured groups flow") {
        REQUIRE(run_cli("train " + data + " --layers 36,10,4 --epochs 2 --seed 7"
                            " --checkpoint ck.json",
                        bench.dir)
                    .exit_code == 0);
        {
            std::ofstream groups(bench.dir / "groups.json");
            groups << "[[0,1,2],[3,4,5],[6,7,8],[9,10,11]]";
        }
        const auto run = run_cli("prune-oneshot " + data + kSmallFisher +
                                     " --checkpoint ck.json --sparsity 0.02 --seed 3"
                                     " --groups groups.json --group-mode correlated"
                                     " --report sr.json",
                                 bench.dir);
        REQUIRE(run.exit_code == 0);
        const auto report = nlohmann::json::parse(read_file(bench.dir / "sr.json"));
        REQUIRE(report["method"] == "structured-correlated");
        REQUIRE(report["final_sparsity"].get<double>() > 0.0);
    }

    SECTION("exit codes: missing data -> 3, bad flags -> 2") {
        const auto missing = run_cli("train --train-images nope.idx --train-labels nope.idx"
                                     " --test-images nope.idx --test-labels nope.idx"
                                     " --layers 36,10,4 --checkpoint ck.json",
                                     bench.dir);
        REQUIRE(missing.exit_code == 3);

        const auto bad_flag = run_cli("prune-oneshot --no-such-flag", bench.dir);
        REQUIRE(bad_flag.exit_code == 2);

        REQUIRE(run_cli("train " + data + " --layers 36,10,4 --epochs 1 --seed 7"
                            " --checkpoint ck.json",
                        bench.dir)
                    .exit_code == 0);
        const auto bad_sparsity = run_cli("prune-oneshot " + data + kSmallFisher +
                                              " --checkpoint ck.json --sparsity 1.5"
                                              " --method magnitude --report r.json",
                                          bench.dir);
        REQUIRE(bad_sparsity.exit_code == 2);
    }

    SECTION("interrupted-style partial outputs never appear (no .tmp left)") {
        REQUIRE(run_cli("train " + data + " --layers 36,10,4 --epochs 1 --seed 7"
                            " --checkpoint ck.json",
                        bench.dir)
                    .exit_code == 0);
        bool found_tmp = false;
        for (const auto& entry : fs::directory_iterator(bench.dir))
            found_tmp = found_tmp || entry.path().string().ends_with(".tmp");
        REQUIRE_FALSE(found_tmp);
    }
}
