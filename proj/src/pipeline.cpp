#include "thh/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "thh/eval.hpp"
#include "thh/rng.hpp"

namespace thh::pipeline {

namespace fs = std::filesystem;

namespace {

std::uint64_t derive_seed(std::uint64_t master, const char* label) {
    return mix64(master ^ hash_label(label));
}

std::string two_digits(int id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d", id);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
    if (!out) throw DataError("short write to " + path.string());
}

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' expects a number, got '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' expects a non-negative integer, got '" +
                         value + "'");
    }
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    return static_cast<std::size_t>(parse_u64(key, value));
}

long parse_long(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' expects an integer, got '" + value + "'");
    }
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

Profile desk_profile() {
    Profile p;
    p.name = "desk";
    // model/synth defaults already sit at desk scale; make the linkage explicit
    p.model.context_len = 96;
    p.model.horizon = 96;
    p.model.channels = 3;
    p.model.stacks = 2;
    p.model.blocks_per_stack = 2;
    p.model.layers_per_block = 2;
    p.model.layer_width = 64;
    p.model.dropout_rate = 0.1;
    p.model.pooling_kernels = {4, 1};
    p.model.downsample_ratios = {4, 1};
    p.synth.length = 30000;
    p.synth.period = 480;
    // Desk training must push the clean residual below the per-window MSE
    // contribution of an unreplicated trigger (~1e-4 for a 0.05-amplitude,
    // 24-sample pattern over a 3x96 horizon); otherwise fine-tuning has no
    // usable gradient toward replication. 40 epochs at 1e-3 lands ~5e-5.
    p.train.lr = 1e-3;
    p.train.batch = 32;
    p.train.epochs = 40;
    p.poison.threshold = 1e-5;
    p.poison.max_epochs = 200;
    p.poison.patience = 40;
    p.poison.lr = 1e-3;
    p.poison.batch = 32;
    p.poison.offset = 24;
    p.verify.offset = 24;
    p.recon.width = 24;
    p.recon.offset = 24;
    p.recon.shape_offsets = {43, 46, 49, 52, 55};
    p.recon.esa_loss.injection_positions = {6, 31, 56, 81};
    p.recon.evolve_contexts = 4;
    p.poison_fraction = 0.10;
    p.n_public = 3;
    apply_seed(p, 7);
    return p;
}

Profile paper_profile() {
    Profile p;
    p.name = "paper";
    p.model.context_len = 400;
    p.model.horizon = 400;
    p.model.channels = 3;
    p.model.stacks = 4;
    p.model.blocks_per_stack = 4;
    p.model.layers_per_block = 2;
    p.model.layer_width = 512;
    p.model.dropout_rate = 0.1;
    p.model.pooling_kernels = {8, 4, 2, 1};
    p.model.downsample_ratios = {8, 4, 2, 1};
    p.synth.length = 120000;
    p.synth.period = 2400;
    p.train.lr = 1e-4;
    p.train.batch = 32;
    p.train.epochs = 7;
    p.poison.threshold = 1e-5;
    p.poison.max_epochs = 100;
    p.poison.patience = 20;
    p.poison.lr = 1e-4;
    p.poison.batch = 32;
    p.poison.offset = 180;
    p.verify.offset = 180;
    p.recon.width = 75;
    p.recon.offset = 180;
    p.recon.shape_offsets = {180, 183, 186, 189, 192};
    p.recon.esa_loss.injection_positions = {25, 125, 225, 325};
    p.recon.evolve_contexts = 4;
    p.poison_fraction = 0.10;
    p.n_public = 3;
    apply_seed(p, 7);
    return p;
}

Profile profile_by_name(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "paper") return paper_profile();
    throw UsageError("unknown profile '" + name + "' (expected desk or paper)");
}

void apply_seed(Profile& p, std::uint64_t seed) {
    p.seed = seed;
    p.model.seed = derive_seed(seed, "model");
    p.synth.seed = derive_seed(seed, "synth");
    p.train.seed = derive_seed(seed, "train");
    p.poison.seed = derive_seed(seed, "poison");
    p.verify.seed = derive_seed(seed, "verify");
    p.recon.seed = derive_seed(seed, "reconstruct");
}

std::uint64_t trigger_seed(std::uint64_t stage_seed, int trigger_id) {
    return mix64(stage_seed ^ (static_cast<std::uint64_t>(trigger_id) * 0x9e3779b97f4a7c15ULL));
}

std::uint64_t split_seed(const Profile& p) { return derive_seed(p.seed, "split"); }

std::vector<trigger::TriggerSpec> desk_trigger_specs() {
    using trigger::Family;
    std::vector<trigger::TriggerSpec> specs(10);
    specs[0].family = Family::kSine;
    specs[0].amplitude = 0.05;
    specs[0].cycles = 1.0;
    specs[0].channels = {0};
    specs[1].family = Family::kInvertedSine;
    specs[1].amplitude = 0.05;
    specs[1].cycles = 1.0;
    specs[1].channels = {1};
    specs[2].family = Family::kSquare;
    specs[2].amplitude = 0.06;
    specs[2].cycles = 2.0;
    specs[2].channels = {0, 2};
    specs[3].family = Family::kConstant;
    specs[3].amplitude = -0.05;
    specs[3].channels = {0, 1, 2};
    specs[4].family = Family::kMorlet;
    specs[4].amplitude = 0.05;
    specs[4].cycles = 5.0;
    specs[4].channels = {2};
    specs[5].family = Family::kGaussianPulse;
    specs[5].amplitude = 0.05;
    specs[5].width_frac = 0.12;
    specs[5].channels = {1};
    specs[6].family = Family::kSigmoidStep;
    specs[6].amplitude = 0.05;
    specs[6].width_frac = 0.08;
    specs[6].channels = {2};
    specs[7].family = Family::kTriangle;
    specs[7].amplitude = 0.05;
    specs[7].channels = {0};
    specs[8].family = Family::kRandomOscillation;
    specs[8].amplitude = 0.05;
    specs[8].seed = 99;
    specs[8].channels = {1};
    specs[9].family = Family::kZero;
    specs[9].amplitude = 0.0;
    // zero trigger: no affected channels
    return specs;
}

std::vector<trigger::Trigger> suite_triggers(const Profile& p) {
    std::vector<trigger::Trigger> out;
    auto specs = desk_trigger_specs();
    out.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        trigger::Trigger t = trigger::make_trigger(specs[i], p.model.channels, p.recon.width);
        t.id = static_cast<int>(i) + 1;
        out.push_back(std::move(t));
    }
    return out;
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("config: cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw UsageError("config: line " + std::to_string(lineno) +
                             " is not key=value: '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw UsageError("config: line " + std::to_string(lineno) + " has an empty key");
        kv[key] = value;
    }
    return kv;
}

void apply_config(Profile& p, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        if (key == "profile") continue; // consumed by the caller when picking the base profile
        if (key == "seed") {
            apply_seed(p, parse_u64(key, value));
        } else if (key == "n_public") {
            p.n_public = parse_size(key, value);
        } else if (key == "offset") {
            long off = parse_long(key, value);
            if (off < 0) throw UsageError("config: offset must be non-negative");
            p.poison.offset = static_cast<std::size_t>(off);
            p.verify.offset = static_cast<std::size_t>(off);
            p.recon.offset = off;
        } else if (key == "trigger.width") {
            p.recon.width = parse_size(key, value);
        } else if (key == "poison.fraction") {
            double f = parse_double(key, value);
            if (!(f > 0.0 && f < 1.0))
                throw UsageError("config: poison.fraction must be in (0,1)");
            p.poison_fraction = f;
        } else if (key == "synth.length") {
            p.synth.length = parse_size(key, value);
        } else if (key == "synth.period") {
            p.synth.period = parse_size(key, value);
        } else if (key == "synth.noise_sd") {
            p.synth.noise_sd = parse_double(key, value);
        } else if (key == "synth.drift") {
            p.synth.drift_amplitude = parse_double(key, value);
        } else if (key == "train.lr") {
            p.train.lr = parse_double(key, value);
        } else if (key == "train.batch") {
            p.train.batch = parse_size(key, value);
        } else if (key == "train.epochs") {
            p.train.epochs = parse_size(key, value);
        } else if (key == "poison.threshold") {
            p.poison.threshold = parse_double(key, value);
        } else if (key == "poison.max_epochs") {
            p.poison.max_epochs = parse_size(key, value);
        } else if (key == "poison.patience") {
            p.poison.patience = parse_size(key, value);
        } else if (key == "poison.lr") {
            p.poison.lr = parse_double(key, value);
        } else if (key == "poison.batch") {
            p.poison.batch = parse_size(key, value);
        } else if (key == "verify.contexts") {
            p.verify.n_contexts = parse_size(key, value);
        } else if (key == "verify.replication_bound") {
            p.verify.replication_bound = parse_double(key, value);
        } else if (key == "verify.reaction_bound") {
            p.verify.reaction_bound = parse_double(key, value);
        } else if (key == "verify.agreement_factor") {
            p.verify.agreement_factor = parse_double(key, value);
        } else if (key == "recon.contexts") {
            p.recon.contexts = parse_size(key, value);
        } else if (key == "recon.eval_contexts") {
            p.recon.eval_contexts = parse_size(key, value);
        } else if (key == "probe.amplitude") {
            p.recon.probe.amplitude = parse_double(key, value);
        } else if (key == "probe.width") {
            p.recon.probe.width = parse_size(key, value);
        } else if (key == "probe.threshold") {
            p.recon.probe.threshold = parse_double(key, value);
        } else if (key == "baseline.epochs") {
            p.recon.baseline_epochs = parse_size(key, value);
        } else if (key == "baseline.lr") {
            p.recon.baseline_lr = parse_double(key, value);
        } else if (key == "baseline.weight_decay") {
            p.recon.baseline_weight_decay = parse_double(key, value);
        } else if (key == "baseline.lr_factor") {
            p.recon.baseline_lr_factor = parse_double(key, value);
        } else if (key == "baseline.lr_every") {
            p.recon.baseline_lr_every = parse_size(key, value);
        } else if (key == "shape.amplitude") {
            p.recon.shape_amplitude = parse_double(key, value);
        } else if (key == "local_max.sweeps") {
            p.recon.local_max_sweeps = parse_size(key, value);
        } else if (key == "sgd.epochs") {
            p.recon.sgd_epochs = parse_size(key, value);
        } else if (key == "sgd.batch") {
            p.recon.sgd_batch = parse_size(key, value);
        } else if (key == "sgd.lr") {
            p.recon.sgd_lr = parse_double(key, value);
        } else if (key == "sgd.momentum") {
            p.recon.sgd_momentum = parse_double(key, value);
        } else if (key == "sgd.plateau_factor") {
            p.recon.sgd_plateau_factor = parse_double(key, value);
        } else if (key == "sgd.plateau_patience") {
            p.recon.sgd_plateau_patience = parse_size(key, value);
        } else if (key == "fixed_point.iters") {
            p.recon.fixed_point_iters = parse_size(key, value);
        } else if (key == "savgol.window") {
            p.recon.savgol_window = parse_size(key, value);
        } else if (key == "savgol.order") {
            p.recon.savgol_order = parse_size(key, value);
        } else if (key == "zero.threshold") {
            p.recon.zero_threshold = parse_double(key, value);
        } else if (key == "evolve.population") {
            p.recon.population = parse_size(key, value);
        } else if (key == "evolve.generations") {
            p.recon.generations = parse_size(key, value);
        } else if (key == "evolve.tournament") {
            p.recon.tournament = parse_size(key, value);
        } else if (key == "evolve.mutation_sd") {
            p.recon.mutation_sd = parse_double(key, value);
        } else if (key == "evolve.elites") {
            p.recon.elites = parse_size(key, value);
        } else if (key == "evolve.refine_fraction") {
            p.recon.refine_fraction = parse_double(key, value);
        } else if (key == "evolve.refine_steps") {
            p.recon.refine_steps = parse_size(key, value);
        } else if (key == "evolve.refine_lr") {
            p.recon.refine_lr = parse_double(key, value);
        } else if (key == "evolve.contexts") {
            p.recon.evolve_contexts = parse_size(key, value);
        } else {
            throw UsageError("config: unknown key '" + key + "'");
        }
    }
}

std::string file_hash_hex(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a 64 offset basis
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (jobs <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (first_error) return; // stop claiming work after a failure
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    std::size_t k = std::min(jobs, n);
    pool.reserve(k);
    for (std::size_t i = 0; i < k; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

namespace paths {
fs::path data_csv(const fs::path& root) { return root / "data" / "telemetry.csv"; }
fs::path clean_model(const fs::path& root) { return root / "models" / "clean.thm"; }
fs::path poisoned_model(const fs::path& root, int id) {
    return root / "models" / ("poisoned_" + two_digits(id) + ".thm");
}
fs::path ground_truth(const fs::path& root) { return root / "triggers" / "ground_truth.csv"; }
fs::path public_ids(const fs::path& root) { return root / "triggers" / "public_ids.txt"; }
fs::path train_report(const fs::path& root) { return root / "reports" / "train_clean.txt"; }
fs::path poison_report(const fs::path& root, int id) {
    return root / "reports" / ("poison_" + two_digits(id) + ".txt");
}
fs::path verify_report(const fs::path& root, int id) {
    return root / "reports" / ("verify_" + two_digits(id) + ".txt");
}
fs::path submission(const fs::path& root, const std::string& method) {
    return root / "submissions" / (method + ".csv");
}
fs::path diagnostics(const fs::path& root, const std::string& method, int id) {
    return root / "diagnostics" / (method + "_" + two_digits(id) + ".txt");
}
fs::path score_report(const fs::path& root, const std::string& method) {
    return root / "reports" / ("score_" + method + ".txt");
}
fs::path plot(const fs::path& root, const std::string& method, int id) {
    return root / "plots" / (method + "_" + two_digits(id) + ".svg");
}
fs::path manifest(const fs::path& root) { return root / "manifest.txt"; }
} // namespace paths

SuiteOutcome run_suite(const Profile& p, const SuiteOptions& opt) {
    const fs::path& root = opt.out_dir;
    auto log = [&](const std::string& msg) {
        if (opt.verbose) std::cerr << "[suite] " << msg << std::endl;
    };
    for (const char* sub : {"data", "models", "triggers", "reports", "submissions",
                            "diagnostics", "plots"})
        fs::create_directories(root / sub);

    SuiteOutcome outcome;
    std::vector<fs::path> artifacts; // relative paths, collected as written
    auto track = [&](const fs::path& abs) {
        artifacts.push_back(fs::relative(abs, root));
    };

    auto t0 = std::chrono::steady_clock::now();

    // 1. synthetic telemetry
    series::UniformSeries s = series::synth_telemetry(p.synth);
    if (s.channels != p.model.channels)
        throw Error("suite: synthetic data channel count does not match the model");
    series::write_csv(s, paths::data_csv(root).string());
    track(paths::data_csv(root));
    outcome.stage_seconds.emplace_back("synth", elapsed_s(t0));
    log("data: " + std::to_string(s.length) + " samples x " + std::to_string(s.channels) +
        " channels (" + std::to_string(elapsed_s(t0)) + "s)");

    const series::PoisonSplit split =
        series::split_for_poisoning(s, p.poison_fraction, p.model.context_len + p.model.horizon);
    const series::UniformSeries clean_prefix = series::slice(s, split.clean_train);

    // 2. clean model
    auto t1 = std::chrono::steady_clock::now();
    nhits::ForecastModel clean(p.model);
    clean.norm_params = s.norm_params;
    clean.channel_names = s.channel_names;
    nhits::TrainResult tr = nhits::train_clean(clean, s, split.clean_train, p.train);
    clean.save(paths::clean_model(root).string());
    track(paths::clean_model(root));
    {
        std::ostringstream rep;
        rep << "windows=" << tr.windows << "\n";
        for (std::size_t e = 0; e < tr.epoch_loss.size(); ++e) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "epoch_%02zu_mse=%.9g", e + 1, tr.epoch_loss[e]);
            rep << buf << "\n";
        }
        write_text(paths::train_report(root), rep.str());
        track(paths::train_report(root));
    }
    outcome.stage_seconds.emplace_back("train", elapsed_s(t1));
    log("clean model trained (" + std::to_string(elapsed_s(t1)) + "s)");

    // 3. trigger suite + split
    const std::vector<trigger::Trigger> truth = suite_triggers(p);
    eval::write_submission(truth, paths::ground_truth(root).string());
    track(paths::ground_truth(root));
    auto [public_ids, private_ids] = eval::stratified_split(truth, p.n_public, split_seed(p));
    std::sort(public_ids.begin(), public_ids.end());
    std::sort(private_ids.begin(), private_ids.end());
    {
        std::ostringstream txt;
        for (int id : public_ids) txt << id << "\n";
        write_text(paths::public_ids(root), txt.str());
        track(paths::public_ids(root));
    }
    log("triggers: " + std::to_string(truth.size()) + " rendered, " +
        std::to_string(public_ids.size()) + " public / " + std::to_string(private_ids.size()) +
        " private");

    // 4. poison + verify, one model per trigger
    auto t2 = std::chrono::steady_clock::now();
    const std::size_t n = truth.size();
    std::vector<std::optional<nhits::ForecastModel>> models(n);
    std::mutex state_mutex;
    parallel_for(n, opt.jobs, [&](std::size_t i) {
        const trigger::Trigger& trig = truth[i];
        poison::PoisonConfig pc = p.poison;
        pc.seed = trigger_seed(p.poison.seed, trig.id);
        pc.verbose = false;
        auto [pm, rep] = poison::poison_model(clean, s, split, trig, pc);
        pm.save(paths::poisoned_model(root, trig.id).string());
        write_text(paths::poison_report(root, trig.id), rep.to_string());

        poison::VerificationConfig vc = p.verify;
        vc.seed = trigger_seed(p.verify.seed, trig.id);
        poison::VerificationReport vr = poison::verify_backdoor(
            clean, pm, trig, series::slice(s, split.seg_clean), vc);
        write_text(paths::verify_report(root, trig.id), vr.to_string());

        {
            std::lock_guard<std::mutex> lock(state_mutex);
            models[i].emplace(std::move(pm));
            if (!vr.pass)
                outcome.verification_failures.push_back(
                    "trigger " + std::to_string(trig.id) + ": backdoor verification failed");
            if (opt.verbose)
                std::cerr << "[suite] poisoned trigger " << trig.id << " ("
                          << rep.stop_reason << ", " << rep.epochs << " epochs, verify "
                          << (vr.pass ? "pass" : "FAIL") << ")" << std::endl;
        }
    });
    for (std::size_t i = 0; i < n; ++i) {
        track(paths::poisoned_model(root, truth[i].id));
        track(paths::poison_report(root, truth[i].id));
        track(paths::verify_report(root, truth[i].id));
    }
    std::sort(outcome.verification_failures.begin(), outcome.verification_failures.end());
    outcome.all_verified = outcome.verification_failures.empty();
    outcome.stage_seconds.emplace_back("poison", elapsed_s(t2));
    log("poisoning done (" + std::to_string(elapsed_s(t2)) + "s)");

    // 5. reconstruction with every engine, then scoring and plots
    const std::vector<std::string> methods = {"baseline", "ambrosm", "evolve"};
    for (const std::string& method : methods) {
        auto t3 = std::chrono::steady_clock::now();
        std::vector<trigger::Trigger> recon(n);
        parallel_for(n, opt.jobs, [&](std::size_t i) {
            const trigger::Trigger& trig = truth[i];
            reconstruct::ReconstructConfig rc = p.recon;
            rc.trigger_id = trig.id;
            rc.seed = trigger_seed(p.recon.seed, trig.id);
            rc.verbose = false;
            const nhits::ForecastModel& pm = *models[i];
            reconstruct::EngineResult er;
            if (method == "baseline")
                er = reconstruct::reconstruct_baseline(pm, clean_prefix, rc);
            else if (method == "ambrosm")
                er = reconstruct::reconstruct_ambrosm(pm, clean_prefix, rc);
            else
                er = reconstruct::reconstruct_evolve(pm, clean_prefix, rc);
            er.trigger.id = trig.id;
            er.diagnostics.write(paths::diagnostics(root, method, trig.id).string());
            {
                std::lock_guard<std::mutex> lock(state_mutex);
                recon[i] = std::move(er.trigger);
                if (opt.verbose)
                    std::cerr << "[suite] " << method << " reconstructed trigger " << trig.id
                              << std::endl;
            }
        });
        eval::write_submission(recon, paths::submission(root, method).string());
        track(paths::submission(root, method));
        for (std::size_t i = 0; i < n; ++i) track(paths::diagnostics(root, method, truth[i].id));
        eval::ScoreReport sr = eval::score_submission(recon, truth, public_ids);
        eval::write_score_report(sr, paths::score_report(root, method).string());
        track(paths::score_report(root, method));
        for (std::size_t i = 0; i < n; ++i) {
            eval::render_trigger_plot(truth[i], &recon[i],
                                      paths::plot(root, method, truth[i].id).string());
            track(paths::plot(root, method, truth[i].id));
        }
        outcome.stage_seconds.emplace_back(method, elapsed_s(t3));
        log(method + ": overall NMAE " + std::to_string(sr.overall_mean) + " (" +
            std::to_string(elapsed_s(t3)) + "s)");
    }

    // 6. the all-zero reference submission
    {
        std::vector<trigger::Trigger> zeros;
        zeros.reserve(n);
        for (const trigger::Trigger& t : truth)
            zeros.push_back(trigger::trigger_from_values(
                t.id, t.channels, t.width, std::vector<double>(t.channels * t.width, 0.0)));
        eval::write_submission(zeros, paths::submission(root, "zero").string());
        track(paths::submission(root, "zero"));
        eval::ScoreReport sr = eval::score_submission(zeros, truth, public_ids);
        eval::write_score_report(sr, paths::score_report(root, "zero").string());
        track(paths::score_report(root, "zero"));
        log("zero submission: overall NMAE " + std::to_string(sr.overall_mean));
    }

    // 7. manifest with content hashes
    std::sort(artifacts.begin(), artifacts.end());
    artifacts.erase(std::unique(artifacts.begin(), artifacts.end()), artifacts.end());
    {
        std::ostringstream txt;
        for (const fs::path& rel : artifacts)
            txt << file_hash_hex(root / rel) << "  " << rel.generic_string() << "\n";
        write_text(paths::manifest(root), txt.str());
    }
    outcome.artifacts = artifacts;
    log("suite complete (" + std::to_string(elapsed_s(t0)) + "s total)");
    return outcome;
}

} // namespace thh::pipeline
