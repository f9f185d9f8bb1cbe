// simdistill command line: one subcommand per pipeline stage, plus `run`,
// `stats` and a scripted mock endpoint for offline work.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 missing upstream
// artifact, 4 endpoint failure.

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "simdistill/errors.hpp"
#include "simdistill/mock_llm.hpp"
#include "simdistill/pipeline.hpp"

namespace {

using namespace simdistill;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct Common {
    std::string config;
    std::string run_dir = "run";
    bool force = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_force = true) {
    cmd->add_option("-c,--config", c.config, "Pipeline config (JSON)")->required();
    cmd->add_option("-r,--run-dir", c.run_dir, "Run directory")->capture_default_str();
    if (with_force) cmd->add_flag("-f,--force", c.force, "Re-run even when inputs are unchanged");
}

int run_stages(const Common& c, const std::vector<Stage>& stages, const EvalOverrides& overrides) {
    PipelineConfig config = PipelineConfig::load(c.config);
    RunLock lock(c.run_dir);
    Pipeline pipeline(std::move(config), c.run_dir, &std::cerr);
    pipeline.set_eval_overrides(overrides);
    for (Stage s : stages) {
        const StageResult r = pipeline.run_stage(s, c.force);
        std::cout << to_string(s) << (r.skipped ? " skipped (up to date)" : " done") << "\n";
        if (s == Stage::Eval && !r.skipped) {
            std::cout << read_file(pipeline.run_dir() / "eval" / "summary.txt");
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Uncertainty-guided distillation of recommender user simulators"};
    app.require_subcommand(1);

    Common common;
    for (Stage s : kAllStages) {
        if (s == Stage::Eval) continue;
        auto* cmd = app.add_subcommand(std::string(to_string(s)), "Run the " + std::string(to_string(s)) + " stage");
        add_common(cmd, common);
        cmd->callback([s, &common] { std::exit(run_stages(common, {s}, {})); });
    }

    std::string eval_endpoint;
    std::string eval_mode;
    std::string eval_scenes;
    auto* eval = app.add_subcommand("eval", "Score behavior-prediction accuracy on evaluation scenes");
    add_common(eval, common);
    eval->add_option("--endpoint", eval_endpoint, "Endpoint role to evaluate (strong, weak, eval)")
        ->check(CLI::IsMember({"strong", "weak", "eval"}));
    eval->add_option("--mode", eval_mode, "Prompt mode")->check(CLI::IsMember({"decision", "direct"}));
    eval->add_option("--scenes", eval_scenes, "Scene file (default: <run-dir>/eval_scenes.jsonl)");
    eval->callback([&] {
        EvalOverrides o;
        if (!eval_endpoint.empty()) o.role = role_from_string(eval_endpoint);
        if (!eval_mode.empty()) o.mode = eval_mode == "direct" ? PromptVariant::Direct : PromptVariant::Decision;
        if (!eval_scenes.empty()) o.scenes = eval_scenes;
        std::exit(run_stages(common, {Stage::Eval}, o));
    });

    bool with_eval = true;
    auto* run = app.add_subcommand("run", "Run every stage in order, skipping those already up to date");
    add_common(run, common);
    run->add_flag("!--no-eval", with_eval, "Stop after emit");
    run->callback([&] {
        std::vector<Stage> stages(std::begin(kAllStages), std::end(kAllStages));
        if (!with_eval) stages.pop_back();
        std::exit(run_stages(common, stages, {}));
    });

    auto* stats = app.add_subcommand("stats", "Print token usage per domain and endpoint");
    add_common(stats, common, false);
    stats->callback([&] {
        Pipeline pipeline(PipelineConfig::load(common.config), common.run_dir);
        std::cout << pipeline.stats_report();
        std::exit(0);
    });

    std::string script;
    std::string host = "127.0.0.1";
    int port = 8089;
    auto* mock = app.add_subcommand("mock-server", "Serve a scripted OpenAI-compatible endpoint");
    mock->add_option("--script", script, "Mock script (JSON); empty serves uniform answers");
    mock->add_option("--host", host)->capture_default_str();
    mock->add_option("--port", port, "0 picks a free port")->capture_default_str();
    mock->callback([&] {
        MockServer server(shared_mock_engine(script), host, port);
        std::cout << "listening on http://" << host << ":" << server.port() << "/v1" << std::endl;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
        std::exit(0);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const simdistill::Error& e) {
        std::cerr << "simdistill: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "simdistill: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
