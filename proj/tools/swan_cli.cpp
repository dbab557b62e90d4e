// Command-line front end: synth, train, eval, infer, gradcheck, complexity.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure. Errors are
// reported as a single JSON line on stderr: {"error":"validation|runtime","message":...}.

#include <malloc.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "swan/config.hpp"
#include "swan/gradcheck_suite.hpp"
#include "swan/swan.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace swan;

namespace {

enum Exit { kOk = 0, kValidation = 1, kRuntime = 2 };

struct RuntimeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int report_error(Exit code, const std::string& message) {
    json j = {{"error", code == kValidation ? "validation" : "runtime"}, {"message", message}};
    std::cerr << j.dump() << '\n';
    return code;
}

/// Flags shared by the commands that read a configuration.
struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<double> threshold;
    std::string device;
};

void add_config_flags(CLI::App* cmd, CommonFlags& f, bool with_epochs, bool with_threshold) {
    cmd->add_option("--config", f.config, "JSON file of flat dotted keys (model.*, train.*, synth.*, seed, split.ratio)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "Root seed; overrides the config file's 'seed'");
    if (with_epochs) cmd->add_option("--epochs", f.epochs, "Overrides train.epochs");
    if (with_threshold) cmd->add_option("--threshold", f.threshold, "Decision threshold in (0,1); overrides train.threshold");
    cmd->add_option("--device", f.device, "Reserved; any value is rejected");
}

/// Precedence: built-in defaults < --config file < flags.
CliConfig resolve_config(const CommonFlags& f) {
    if (!f.device.empty()) throw ValueError("--device is reserved and not supported (got '" + f.device + "')");
    CliConfig cfg = f.config.empty() ? CliConfig{} : load_config_file(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.threshold) cfg.train.threshold = *f.threshold;
    cfg.finalize();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

std::vector<Sample> pick(const std::vector<Sample>& all, const std::vector<std::size_t>& idx) {
    std::vector<Sample> out;
    for (auto i : idx) out.push_back(all[i]);
    return out;
}

std::vector<std::size_t> split_selection(const Dataset& ds, const std::string& which) {
    if (which == "train") return ds.split.train;
    if (which == "test") return ds.split.test;
    std::vector<std::size_t> all(ds.samples.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
}

// --- synth ------------------------------------------------------------------

int cmd_synth(const CommonFlags& f, const std::string& out) {
    const auto cfg = resolve_config(f);
    const auto samples = synth_dataset(cfg.synth);
    const auto split = split_indices(samples.size(), cfg.split_ratio, cfg.split_seed());
    write_dataset(out, samples, split, to_flat_json(cfg), cfg.seed);
    std::cout << json{{"out", out}, {"count", samples.size()}, {"train", split.train.size()}, {"test", split.test.size()}}.dump()
              << '\n';
    return kOk;
}

// --- train ------------------------------------------------------------------

int cmd_train(const CommonFlags& f, const std::string& data, const std::string& out) {
    const auto cfg = resolve_config(f);
    const auto ds = read_dataset(data);
    const auto train_set = pick(ds.samples, ds.split.train);
    const auto val_set = pick(ds.samples, ds.split.test);
    fs::create_directories(out);
    write_text(fs::path(out) / "config.json", to_flat_json(cfg).dump(2) + "\n");

    auto model = build_swan<float>(cfg.model);
    std::ofstream log(fs::path(out) / "train.jsonl");
    if (!log) throw IoError("cannot write " + (fs::path(out) / "train.jsonl").string());
    TrainOutputs io;
    io.log = &log;
    io.checkpoint = fs::path(out) / "model.ckpt";
    io.on_epoch = [](const EpochLog& e) { std::cerr << to_json(e).dump() << '\n'; };
    train(model, train_set, val_set, cfg.train, io);

    auto report = evaluate(model, val_set, cfg.train.threshold, default_thresholds());
    write_text(fs::path(out) / "roc.csv", roc_csv(report.roc));
    report.roc.clear();
    write_text(fs::path(out) / "metrics.json", to_json(report).dump(2) + "\n");
    std::cout << to_json(report).dump() << '\n';
    return kOk;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, const std::string& pred_dir, const std::string& data,
             const std::string& which, const std::string& out) {
    const auto cfg = resolve_config(f);
    if (checkpoint.empty() == pred_dir.empty()) throw ValueError("eval: pass exactly one of --checkpoint or --pred");
    const auto ds = read_dataset(data);
    const auto idx = split_selection(ds, which);
    if (idx.empty()) throw ValueError("eval: split '" + which + "' is empty");

    std::vector<Prediction> preds;
    if (!checkpoint.empty()) {
        auto model = load_checkpoint(checkpoint);
        preds = predict_all(model, pick(ds.samples, idx));
    } else {
        for (auto i : idx) {
            const auto path = fs::path(pred_dir) / sample_name(i);
            auto prob = load_image(path);
            if (prob.shape() != ds.samples[i].mask.shape()) {
                throw ValueError("eval: prediction " + path.string() + " has shape " + to_string(prob.shape()) +
                                 ", ground truth is " + to_string(ds.samples[i].mask.shape()));
            }
            preds.push_back({prob, binary_mask(ds.samples[i].mask)});
        }
    }
    const auto items = prob_pairs(preds);
    auto report = report_at(items, cfg.train.threshold);
    report.roc = roc_sweep(items, default_thresholds());
    if (!out.empty()) {
        fs::create_directories(out);
        write_text(fs::path(out) / "roc.csv", roc_csv(report.roc));
    }
    json j = to_json(report);
    j["threshold"] = cfg.train.threshold;
    j["split"] = which;
    if (!out.empty()) write_text(fs::path(out) / "metrics.json", j.dump(2) + "\n");
    std::cout << j.dump() << '\n';
    return kOk;
}

// --- infer ------------------------------------------------------------------

int cmd_infer(const CommonFlags& f, const std::string& checkpoint, const std::string& image, const std::string& out,
              const std::string& format) {
    const auto cfg = resolve_config(f);
    auto model = load_checkpoint(checkpoint);
    const auto r = infer(model, load_image(image), cfg.train.threshold);
    fs::create_directories(out);
    const auto mask_path = fs::path(out) / ("mask." + format);
    const auto heat_path = fs::path(out) / ("heatmap." + format);
    save_image(r.mask, mask_path);
    save_heatmap(r.prob, heat_path);
    std::size_t positives = 0;
    for (float v : r.mask.data()) positives += v > 0.5f;
    std::cout << json{{"mask", mask_path.string()}, {"heatmap", heat_path.string()}, {"threshold", cfg.train.threshold},
                      {"positive_pixels", positives}}
                     .dump()
              << '\n';
    return kOk;
}

// --- gradcheck --------------------------------------------------------------

int cmd_gradcheck(const CommonFlags& f, const std::string& scope, double tolerance) {
    resolve_config(f);
    std::vector<std::string> scopes = scope == "all" ? gradcheck_scopes() : std::vector<std::string>{scope};
    std::size_t failed = 0, total = 0;
    for (const auto& s : scopes) {
        for (const auto& r : run_gradcheck_scope(s, tolerance)) {
            std::cout << json{{"scope", s}, {"check", r.name}, {"rel_error", r.rel_error}, {"probed", r.probed}, {"passed", r.passed}}
                             .dump()
                      << '\n';
            ++total;
            failed += !r.passed;
        }
    }
    if (failed) throw RuntimeFailure("gradcheck: " + std::to_string(failed) + " of " + std::to_string(total) + " checks failed");
    return kOk;
}

// --- complexity -------------------------------------------------------------

std::vector<std::uint64_t> parse_layer(const std::string& spec) {
    std::vector<std::uint64_t> v;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            const long long x = std::stoll(part, &used);
            if (used != part.size() || x < 1) throw std::invalid_argument(part);
            v.push_back(static_cast<std::uint64_t>(x));
        } catch (const std::exception&) {
            throw ValueError("--layer: '" + spec + "' must be five positive integers cin,cout,k,h,w");
        }
    }
    if (v.size() != 5) throw ValueError("--layer: '" + spec + "' must be five positive integers cin,cout,k,h,w");
    return v;
}

int cmd_complexity(const CommonFlags& f, const std::vector<std::string>& layers, std::optional<std::size_t> size) {
    const auto cfg = resolve_config(f);
    const std::uint64_t levels = cfg.model.hwconv_levels;
    struct Layer {
        std::string name;
        std::uint64_t cin, cout, k, h, w;
    };
    std::vector<Layer> list;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto v = parse_layer(layers[i]);
        list.push_back({"layer" + std::to_string(i + 1), v[0], v[1], v[2], v[3], v[4]});
    }
    if (list.empty()) {
        // Encoder stages of the configured model at the requested input size.
        const std::uint64_t side = size.value_or(cfg.synth.height);
        for (std::size_t k = 0; k < kStages; ++k) {
            const std::uint64_t cin = k == 0 ? 1 : cfg.model.channels[k - 1];
            list.push_back({"enc" + std::to_string(k + 1), cin, cfg.model.channels[k], 3, side >> k, side >> k});
        }
    }
    json rows = json::array();
    std::uint64_t total_flops = 0, total_params = 0;
    bool params_complete = true;
    for (const auto& l : list) {
        const auto flops = flops_standard_conv(l.cin, l.cout, l.k, l.h, l.w);
        total_flops += flops;
        json hw = nullptr;
        const std::uint64_t div = std::uint64_t{1} << levels;
        if (l.h % div == 0 && l.w % div == 0) {
            const auto p = params_hwconv(l.cin, levels, l.h, l.w);
            total_params += p;
            hw = p;
        } else {
            params_complete = false;
        }
        rows.push_back({{"name", l.name}, {"cin", l.cin}, {"cout", l.cout}, {"k", l.k}, {"h", l.h}, {"w", l.w},
                        {"flops", flops}, {"hwconv_params", hw}});
    }
    json j = {{"layers", rows},
              {"hwconv_levels", levels},
              {"total", {{"flops", total_flops}, {"hwconv_params", params_complete ? json(total_params) : json(nullptr)}}}};
    if (layers.empty()) j["model_parameters"] = build_swan<float>(cfg.model).parameter_count();
    std::cout << j.dump() << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    CLI::App app{"SWAN small-target segmentation toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every command");

    CommonFlags synth_f, train_f, eval_f, infer_f, grad_f, cx_f;
    std::string synth_out, train_data, train_out, eval_ckpt, eval_pred, eval_data, eval_split = "test", eval_out;
    std::string infer_ckpt, infer_image, infer_out, infer_format = "png", grad_scope;
    double grad_tol = 1e-3;
    std::vector<std::string> cx_layers;
    std::optional<std::size_t> cx_size;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset directory");
    add_config_flags(synth, synth_f, false, false);
    synth->add_option("--out", synth_out, "Output dataset directory")->required();

    auto* tr = app.add_subcommand("train", "Train on a dataset directory; writes checkpoint, JSONL log, metrics and ROC");
    add_config_flags(tr, train_f, true, true);
    tr->add_option("--data", train_data, "Dataset directory (from synth)")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--out", train_out, "Output run directory")->required();

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (or stored predictions) against dataset masks");
    add_config_flags(ev, eval_f, false, true);
    ev->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->check(CLI::ExistingFile);
    ev->add_option("--pred", eval_pred, "Directory of probability maps named like the dataset images")
        ->check(CLI::ExistingDirectory);
    ev->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--split", eval_split, "Which samples to score")->check(CLI::IsMember({"train", "test", "all"}));
    ev->add_option("--out", eval_out, "Optional directory for metrics.json and roc.csv");

    auto* inf = app.add_subcommand("infer", "Segment one image; writes mask and heatmap");
    add_config_flags(inf, infer_f, false, true);
    inf->add_option("--checkpoint", infer_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    inf->add_option("--image", infer_image, "Input PNG or PGM")->required()->check(CLI::ExistingFile);
    inf->add_option("--out", infer_out, "Output directory")->required();
    inf->add_option("--format", infer_format, "Output image format")->check(CLI::IsMember({"png", "pgm"}));

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks at 64-bit");
    add_config_flags(gc, grad_f, false, false);
    std::vector<std::string> scope_choices = gradcheck_scopes();
    scope_choices.push_back("all");
    gc->add_option("--scope", grad_scope, "tensor-op | hwconv | ssa | rdca | network | all")
        ->required()
        ->check(CLI::IsMember(scope_choices));
    gc->add_option("--tolerance", grad_tol, "Maximum relative error")->check(CLI::PositiveNumber);

    auto* cx = app.add_subcommand("complexity", "Per-layer and total Flops / HWConv parameter counts");
    add_config_flags(cx, cx_f, false, false);
    cx->add_option("--layer", cx_layers, "cin,cout,k,h,w (repeatable); default: the model's encoder stages");
    cx->add_option("--size", cx_size, "Input side for the default layer list (default synth.height)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error(kValidation, e.what());
    }

    try {
        if (*synth) return cmd_synth(synth_f, synth_out);
        if (*tr) return cmd_train(train_f, train_data, train_out);
        if (*ev) return cmd_eval(eval_f, eval_ckpt, eval_pred, eval_data, eval_split, eval_out);
        if (*inf) return cmd_infer(infer_f, infer_ckpt, infer_image, infer_out, infer_format);
        if (*gc) return cmd_gradcheck(grad_f, grad_scope, grad_tol);
        if (*cx) return cmd_complexity(cx_f, cx_layers, cx_size);
    } catch (const std::invalid_argument& e) {  // ValueError, ShapeError
        return report_error(kValidation, e.what());
    } catch (const std::exception& e) {  // TrainingError, IoError, RuntimeFailure
        return report_error(kRuntime, e.what());
    }
    return kOk;
}
