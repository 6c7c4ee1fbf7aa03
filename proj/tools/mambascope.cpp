// Command-line driver: weight I/O, synthetic-data inference runs, eta
// sweeps, score dumps, timing, and the property self-test.

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "mambascope/pipeline.hpp"
#include "mambascope/selftest.hpp"
#include "mambascope/synthetic.hpp"
#include "mambascope/weights.hpp"

namespace ms = mambascope;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string weights_path;
    std::string out_path;
    double eta = -1.0;    // <0: take from config
    double alpha = -1.0;  // <0: take from config
    std::int64_t seed = -1;
    std::string format = "json";
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
    auto* c = cmd->add_option("--config", opts.config_path, "run config file (key=value)");
    if (config_required) c->required();
    cmd->add_option("--weights", opts.weights_path, "weight file (MSCP); omitted = seeded init");
    cmd->add_option("--eta", opts.eta, "confidence threshold override");
    cmd->add_option("--alpha", opts.alpha, "refinement ratio override");
    cmd->add_option("--seed", opts.seed, "data seed override");
    cmd->add_option("--out", opts.out_path, "output path (default stdout)");
    cmd->add_option("--format", opts.format, "output format: json or csv")
        ->check(CLI::IsMember({"json", "csv"}));
}

ms::RunConfig resolve_config(const CommonOpts& opts) {
    ms::RunConfig rc = ms::load_run_config(opts.config_path);
    if (opts.eta >= 0.0) rc.model.eta = opts.eta;
    if (opts.alpha >= 0.0) rc.model.alpha = opts.alpha;
    if (opts.seed >= 0) rc.data_seed = static_cast<std::uint64_t>(opts.seed);
    if (!opts.out_path.empty()) rc.out_path = opts.out_path;
    rc.model.validate();
    return rc;
}

ms::Model load_model(const ms::RunConfig& rc, const CommonOpts& opts) {
    ms::Model model;
    model.config = rc.model;
    if (!opts.weights_path.empty())
        model.params = ms::load_weights(opts.weights_path, rc.model);
    else
        model.params = ms::init_encoder(rc.model, rc.model.seed);
    return model;
}

std::ostream& open_out(const ms::RunConfig& rc, std::ofstream& file) {
    if (rc.out_path.empty()) return std::cout;
    file.open(rc.out_path);
    if (!file) throw ms::ConfigError("cannot open output path: " + rc.out_path);
    return file;
}

const char* stage_name(ms::RoutingOutcome::StageTaken s) {
    return s == ms::RoutingOutcome::StageTaken::CoarseAccepted ? "CoarseAccepted"
                                                               : "Refined";
}

int cmd_infer(const CommonOpts& opts) {
    ms::RunConfig rc = resolve_config(opts);
    ms::Model model = load_model(rc, opts);
    auto data = ms::gen_synthetic(rc.model, rc.sample_count, rc.data_seed,
                                  rc.checker_amplitude);
    std::ofstream file;
    std::ostream& out = open_out(rc, file);
    if (opts.format == "csv")
        out << "index,label,stage,predicted,confidence,flops\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        ms::RoutingOutcome r =
            ms::infer(data[i].image, model, rc.model.eta, rc.model.alpha);
        if (opts.format == "csv") {
            out << i << ',' << data[i].label << ',' << stage_name(r.stage) << ','
                << r.predicted << ',' << std::setprecision(9) << r.confidence << ','
                << r.flops_used << '\n';
        } else {
            out << "{\"index\":" << i << ",\"label\":" << data[i].label
                << ",\"stage\":\"" << stage_name(r.stage)
                << "\",\"predicted\":" << r.predicted << ",\"confidence\":"
                << std::setprecision(9) << r.confidence << ",\"flops\":" << r.flops_used
                << "}\n";
        }
    }
    return 0;
}

int cmd_sweep_eta(const CommonOpts& opts) {
    ms::RunConfig rc = resolve_config(opts);
    ms::Model model = load_model(rc, opts);
    auto data = ms::gen_synthetic(rc.model, rc.sample_count, rc.data_seed,
                                  rc.checker_amplitude);
    std::ofstream file;
    std::ostream& out = open_out(rc, file);
    out << "eta,accepted_frac,mean_flops,accuracy\n";
    for (double eta : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        std::size_t accepted = 0, correct = 0;
        std::vector<std::uint64_t> flops;
        flops.reserve(data.size());
        for (const auto& sample : data) {
            ms::RoutingOutcome r = ms::infer(sample.image, model, eta, rc.model.alpha);
            if (r.stage == ms::RoutingOutcome::StageTaken::CoarseAccepted) ++accepted;
            if (r.predicted == sample.label) ++correct;
            flops.push_back(r.flops_used);
        }
        const double n = static_cast<double>(data.size());
        out << eta << ',' << accepted / n << ',' << std::setprecision(12)
            << ms::expected_flops(flops) << ',' << correct / n << '\n';
    }
    return 0;
}

int cmd_dump_scores(const CommonOpts& opts) {
    ms::RunConfig rc = resolve_config(opts);
    ms::Model model = load_model(rc, opts);
    auto data = ms::gen_synthetic(rc.model, 1, rc.data_seed, rc.checker_amplitude);
    ms::CoarseResult coarse = ms::coarse_stage(data[0].image, model);
    ms::ImportanceState state;
    ms::Tensor agg = ms::aggregate(coarse.activations, coarse.z_c.cls_index, rc.model,
                                   &state);
    std::ofstream file;
    std::ostream& out = open_out(rc, file);
    out << "layer,token_index,score\n";
    for (const auto& [layer, raw] : state.per_layer)
        for (std::size_t t = 0; t < raw.dims[0]; ++t)
            out << layer << ',' << t << ',' << std::setprecision(9) << raw.at(t) << '\n';
    for (std::size_t t = 0; t < agg.dims[0]; ++t)
        out << "aggregate," << t << ',' << std::setprecision(9) << agg.at(t) << '\n';
    return 0;
}

int cmd_bench(const CommonOpts& opts) {
    ms::RunConfig rc = resolve_config(opts);
    ms::Model model = load_model(rc, opts);
    auto data = ms::gen_synthetic(rc.model, rc.sample_count, rc.data_seed,
                                  rc.checker_amplitude);
    std::ofstream file;
    std::ostream& out = open_out(rc, file);
    auto t0 = std::chrono::steady_clock::now();
    std::uint64_t total_flops = 0;
    for (const auto& sample : data) {
        ms::RoutingOutcome r = ms::infer(sample.image, model, rc.model.eta,
                                         rc.model.alpha);
        total_flops += r.flops_used;
    }
    auto t1 = std::chrono::steady_clock::now();
    double ms_total = std::chrono::duration<double, std::milli>(t1 - t0).count();
    out << "images," << data.size() << "\n"
        << "total_ms," << ms_total << "\n"
        << "ms_per_image," << ms_total / static_cast<double>(data.size()) << "\n"
        << "mean_flops," << total_flops / data.size() << "\n";
    return 0;
}

int cmd_init_weights(const CommonOpts& opts) {
    ms::RunConfig rc = resolve_config(opts);
    if (rc.out_path.empty())
        throw ms::ConfigError("init-weights requires --out (or out= in config)");
    ms::EncoderParams params = ms::init_encoder(rc.model, rc.model.seed);
    ms::save_weights(params, rc.out_path);
    std::cout << "wrote " << rc.out_path << "\n";
    return 0;
}

int cmd_selftest() {
    auto results = ms::run_selftest();
    bool all_ok = true;
    for (const auto& r : results) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
        if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
        std::cout << "\n";
        all_ok = all_ok && r.passed;
    }
    return all_ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MambaScope-style coarse-to-fine adaptive inference"};
    app.require_subcommand(1);

    CommonOpts infer_opts, sweep_opts, dump_opts, bench_opts, init_opts;
    auto* c_infer = app.add_subcommand("infer", "per-image inference results");
    add_common(c_infer, infer_opts);
    auto* c_sweep = app.add_subcommand("sweep-eta", "eta sweep as CSV");
    add_common(c_sweep, sweep_opts);
    auto* c_dump = app.add_subcommand("dump-scores", "token importance scores as CSV");
    add_common(c_dump, dump_opts);
    auto* c_bench = app.add_subcommand("bench", "timing over the synthetic set");
    add_common(c_bench, bench_opts);
    auto* c_init = app.add_subcommand("init-weights", "write a seeded weight file");
    add_common(c_init, init_opts);
    auto* c_self = app.add_subcommand("selftest", "run the property oracles");
    (void)c_self;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors -> 1
    }

    try {
        if (c_infer->parsed()) return cmd_infer(infer_opts);
        if (c_sweep->parsed()) return cmd_sweep_eta(sweep_opts);
        if (c_dump->parsed()) return cmd_dump_scores(dump_opts);
        if (c_bench->parsed()) return cmd_bench(bench_opts);
        if (c_init->parsed()) return cmd_init_weights(init_opts);
        if (c_self->parsed()) return cmd_selftest();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;  // data / config / IO problems
    }
    return 1;
}
