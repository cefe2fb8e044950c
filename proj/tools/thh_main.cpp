// thh: train, poison, verify, reconstruct and score backdoored forecasters.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 failed
// verification gate.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "thh/common.hpp"
#include "thh/eval.hpp"
#include "thh/nhits.hpp"
#include "thh/pipeline.hpp"
#include "thh/poison.hpp"
#include "thh/reconstruct.hpp"
#include "thh/rng.hpp"
#include "thh/series.hpp"
#include "thh/trigger.hpp"

namespace fs = std::filesystem;
using namespace thh;

namespace {

struct Args {
    std::string profile;     // empty = not given (config file or "desk" decides)
    std::string config_path; // flat key=value overrides
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t jobs = 1;
    std::string out; // empty = THH_DATA_DIR or ./thh-out
    bool quiet = false;

    std::string method;
    std::string data;
    std::string input;
    std::string model;
    std::string clean;
    std::string poisoned;
    std::string triggers;
    std::string submission;
    std::string split_file;
    int trigger_id = 0; // 0 = every trigger in the suite
    std::int64_t interval = 60;
    std::string timestamp_column = "timestamp";
};

void add_common(CLI::App* cmd, Args& a) {
    cmd->add_option("--profile", a.profile, "parameter profile: desk or paper");
    cmd->add_option("--config", a.config_path, "flat key=value configuration file");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&a](const std::uint64_t& v) { a.seed = v; a.seed_set = true; },
        "master seed (every stage seed derives from it)");
    cmd->add_option("--jobs", a.jobs, "worker threads for per-trigger fan-out")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--out", a.out, "artifact root (default $THH_DATA_DIR or ./thh-out)");
    cmd->add_flag("--quiet", a.quiet, "suppress progress logging");
}

fs::path out_root(const Args& a) {
    if (!a.out.empty()) return a.out;
    if (const char* env = std::getenv("THH_DATA_DIR"); env && *env) return env;
    return "thh-out";
}

pipeline::Profile make_profile(const Args& a) {
    std::map<std::string, std::string> kv;
    if (!a.config_path.empty()) kv = pipeline::read_config_file(a.config_path);
    std::string name = "desk";
    if (auto it = kv.find("profile"); it != kv.end()) name = it->second;
    if (!a.profile.empty()) name = a.profile; // flag wins
    pipeline::Profile p = pipeline::profile_by_name(name);
    pipeline::apply_config(p, kv);
    if (a.seed_set) pipeline::apply_seed(p, a.seed); // flag wins
    return p;
}

series::UniformSeries load_series(const std::string& path) {
    return series::load_csv(path);
}

std::string default_or(const std::string& flag, const fs::path& fallback) {
    return flag.empty() ? fallback.string() : flag;
}

std::vector<trigger::Trigger> read_truth(const Args& a, const pipeline::Profile& p,
                                         const fs::path& root) {
    std::string path = default_or(a.triggers, pipeline::paths::ground_truth(root));
    return eval::read_submission(path, p.model.channels, p.recon.width);
}

// Returns the indices into `truth` selected by --trigger-id (0 = all).
std::vector<std::size_t> select_triggers(const std::vector<trigger::Trigger>& truth,
                                         int trigger_id) {
    std::vector<std::size_t> sel;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (trigger_id == 0 || truth[i].id == trigger_id) sel.push_back(i);
    if (sel.empty())
        throw DataError("trigger id " + std::to_string(trigger_id) +
                        " not present in the trigger file");
    return sel;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
    if (!text.empty() && text.back() != '\n') f << '\n';
    if (!f) throw DataError("short write to " + path.string());
}

std::vector<int> read_public_ids(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<int> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            std::size_t pos = 0;
            int v = std::stoi(line, &pos);
            if (pos != line.size()) throw std::invalid_argument("trailing");
            ids.push_back(v);
        } catch (const std::exception&) {
            throw DataError(path.string() + ": line " + std::to_string(lineno) +
                            " is not a trigger id: '" + line + "'");
        }
    }
    return ids;
}

int run_synth(const Args& a) {
    pipeline::Profile p = make_profile(a);
    fs::path root = out_root(a);
    fs::create_directories(root / "data");
    series::UniformSeries s = series::synth_telemetry(p.synth);
    fs::path path = pipeline::paths::data_csv(root);
    series::write_csv(s, path.string());
    std::cout << "wrote " << path.string() << " (" << s.length << " samples x " << s.channels
              << " channels)\n";
    return 0;
}

int run_ingest(const Args& a) {
    fs::path root = out_root(a);
    fs::create_directories(root / "data");
    series::CsvSchema schema;
    schema.timestamp_column = a.timestamp_column;
    series::RawRows rows = series::read_csv_rows(a.input, schema);
    series::UniformSeries s = series::resample_mean(rows, a.interval);
    s = series::normalize(s);
    fs::path path = pipeline::paths::data_csv(root);
    series::write_csv(s, path.string());
    std::cout << "wrote " << path.string() << " (" << s.length << " samples x " << s.channels
              << " channels, interval " << s.interval << "s)\n";
    return 0;
}

int run_train_clean(const Args& a) {
    pipeline::Profile p = make_profile(a);
    fs::path root = out_root(a);
    fs::create_directories(root / "models");
    fs::create_directories(root / "reports");
    series::UniformSeries s = load_series(default_or(a.data, pipeline::paths::data_csv(root)));
    if (!s.normalized()) s = series::normalize(s);
    auto split = series::split_for_poisoning(s, p.poison_fraction,
                                             p.model.context_len + p.model.horizon);
    nhits::ForecastModel model(p.model);
    model.norm_params = s.norm_params;
    model.channel_names = s.channel_names;
    nhits::TrainConfig tc = p.train;
    tc.verbose = !a.quiet;
    nhits::TrainResult tr = nhits::train_clean(model, s, split.clean_train, tc);
    fs::path mp = pipeline::paths::clean_model(root);
    model.save(mp.string());
    std::ostringstream rep;
    rep << "windows=" << tr.windows << "\n";
    for (std::size_t e = 0; e < tr.epoch_loss.size(); ++e) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "epoch_%02zu_mse=%.9g", e + 1, tr.epoch_loss[e]);
        rep << buf << "\n";
    }
    write_text_file(pipeline::paths::train_report(root), rep.str());
    std::cout << "wrote " << mp.string() << " (" << model.net().parameter_count()
              << " parameters, " << tr.epoch_loss.size() << " epochs)\n";
    return 0;
}

int run_make_triggers(const Args& a) {
    pipeline::Profile p = make_profile(a);
    fs::path root = out_root(a);
    fs::create_directories(root / "triggers");
    std::vector<trigger::Trigger> truth = pipeline::suite_triggers(p);
    fs::path path = pipeline::paths::ground_truth(root);
    eval::write_submission(truth, path.string());
    std::cout << "wrote " << path.string() << " (" << truth.size() << " triggers, width "
              << p.recon.width << ")\n";
    return 0;
}

int run_poison(const Args& a) {
    pipeline::Profile p = make_profile(a);
    fs::path root = out_root(a);
    fs::create_directories(root / "models");
    fs::create_directories(root / "reports");
    series::UniformSeries s = load_series(default_or(a.data, pipeline::paths::data_csv(root)));
    if (!s.normalized()) s = series::normalize(s);
    auto split = series::split_for_poisoning(s, p.poison_fraction,
                                             p.model.context_len + p.model.horizon);
    nhits::ForecastModel clean =
        nhits::ForecastModel::load(default_or(a.model, pipeline::paths::clean_model(root)));
    std::vector<trigger::Trigger> truth = read_truth(a, p, root);
    std::vector<std::size_t> sel = select_triggers(truth, a.trigger_id);
    pipeline::parallel_for(sel.size(), a.jobs, [&](std::size_t k) {
        const trigger::Trigger& trig = truth[sel[k]];
        poison::PoisonConfig pc = p.poison;
        pc.seed = pipeline::trigger_seed(p.poison.seed, trig.id);
        pc.verbose = false;
        auto [pm, rep] = poison::poison_model(clean, s, split, trig, pc);
        pm.save(pipeline::paths::poisoned_model(root, trig.id).string());
        write_text_file(pipeline::paths::poison_report(root, trig.id), rep.to_string());
        if (!a.quiet)
            std::cerr << "poisoned trigger " << trig.id << ": " << rep.stop_reason << " after "
                      << rep.epochs << " epochs, val mse " << rep.final_val_mse << "\n";
    });
    std::cout << "wrote " << sel.size() << " poisoned model(s) under "
              << (root / "models").string() << "\n";
    return 0;
}

int run_verify(const Args& a) {
    pipeline::Profile p = make_profile(a);
    fs::path root = out_root(a);
    fs::create_directories(root / "reports");
    series::UniformSeries s = load_series(default_or(a.data, pipeline::paths::data_csv(root)));
    if (!s.normalized()) s = series::normalize(s);
    auto split = series::split_for_poisoning(s, p.poison_fraction,
                                             p.model.context_len + p.model.horizon);
    series::UniformSeries clean_seg = series::slice(s, split.seg_clean);
    nhits::ForecastModel clean =
        nhits::ForecastModel::load(default_or(a.clean, pipeline::paths::clean_model(root)));
    std::vector<trigger::Trigger> truth = read_truth(a, p, root);
    std::vector<std::size_t> sel = select_triggers(truth, a.trigger_id);
    if (!a.poisoned.empty() && sel.size() != 1)
        throw UsageError("--poisoned needs a single --trigger-id");
    bool all_pass = true;
    for (std::size_t k : sel) {
        const trigger::Trigger& trig = truth[k];
        std::string mp = default_or(a.poisoned, pipeline::paths::poisoned_model(root, trig.id));
        nhits::ForecastModel pm = nhits::ForecastModel::load(mp);
        poison::VerificationConfig vc = p.verify;
        vc.seed = pipeline::trigger_seed(p.verify.seed, trig.id);
        poison::VerificationReport vr = poison::verify_backdoor(clean, pm, trig, clean_seg, vc);
        write_text_file(pipeline::paths::verify_report(root, trig.id), vr.to_string());
        std::cout << "trigger " << trig.id << ": " << (vr.pass ? "PASS" : "FAIL") << "\n";
        if (!a.quiet) std::cout << vr.to_string() << "\n";
        all_pass = all_pass && vr.pass;
    }
    return all_pass ? 0 : 3;
}

int run_reconstruct(const Args& a) {
    pipeline::Profile p = make_profile(a);
    fs::path root = out_root(a);
    fs::create_directories(root / "submissions");
    fs::create_directories(root / "diagnostics");
    series::UniformSeries s = load_series(default_or(a.data, pipeline::paths::data_csv(root)));
    if (!s.normalized()) s = series::normalize(s);
    auto split = series::split_for_poisoning(s, p.poison_fraction,
                                             p.model.context_len + p.model.horizon);
    series::UniformSeries clean_prefix = series::slice(s, split.clean_train);
    std::vector<trigger::Trigger> truth = read_truth(a, p, root);
    std::vector<std::size_t> sel = select_triggers(truth, a.trigger_id);
    if (!a.model.empty() && sel.size() != 1)
        throw UsageError("--model needs a single --trigger-id");
    std::vector<trigger::Trigger> recon(sel.size());
    pipeline::parallel_for(sel.size(), a.jobs, [&](std::size_t k) {
        const trigger::Trigger& trig = truth[sel[k]];
        std::string mp = default_or(a.model, pipeline::paths::poisoned_model(root, trig.id));
        nhits::ForecastModel pm = nhits::ForecastModel::load(mp);
        reconstruct::ReconstructConfig rc = p.recon;
        rc.trigger_id = trig.id;
        rc.seed = pipeline::trigger_seed(p.recon.seed, trig.id);
        rc.verbose = false;
        reconstruct::EngineResult er;
        if (a.method == "baseline")
            er = reconstruct::reconstruct_baseline(pm, clean_prefix, rc);
        else if (a.method == "ambrosm")
            er = reconstruct::reconstruct_ambrosm(pm, clean_prefix, rc);
        else
            er = reconstruct::reconstruct_evolve(pm, clean_prefix, rc);
        er.trigger.id = trig.id;
        er.diagnostics.write(pipeline::paths::diagnostics(root, a.method, trig.id).string());
        recon[k] = std::move(er.trigger);
        if (!a.quiet)
            std::cerr << a.method << ": reconstructed trigger " << trig.id << ", nmae "
                      << eval::nmae_range(trig.values, recon[k].values) << "\n";
    });
    fs::path sub = sel.size() == truth.size()
                       ? pipeline::paths::submission(root, a.method)
                       : root / "submissions" /
                             (a.method + "_" +
                              (a.trigger_id < 10 ? "0" : "") + std::to_string(a.trigger_id) +
                              ".csv");
    eval::write_submission(recon, sub.string());
    std::cout << "wrote " << sub.string() << "\n";
    return 0;
}

int run_score(const Args& a) {
    pipeline::Profile p = make_profile(a);
    fs::path root = out_root(a);
    fs::create_directories(root / "reports");
    std::vector<trigger::Trigger> truth = read_truth(a, p, root);
    std::vector<trigger::Trigger> sub =
        eval::read_submission(a.submission, p.model.channels, p.recon.width);
    std::vector<int> public_ids;
    std::string split_path = default_or(a.split_file, pipeline::paths::public_ids(root));
    if (fs::exists(split_path)) {
        public_ids = read_public_ids(split_path);
    } else {
        auto [pub, priv] = eval::stratified_split(truth, p.n_public, pipeline::split_seed(p));
        public_ids = std::move(pub);
    }
    eval::ScoreReport sr = eval::score_submission(sub, truth, public_ids);
    std::string stem = fs::path(a.submission).stem().string();
    fs::path rp = pipeline::paths::score_report(root, stem);
    eval::write_score_report(sr, rp.string());
    std::cout << eval::format_score_report(sr);
    if (!a.quiet) std::cout << "wrote " << rp.string() << "\n";
    return 0;
}

int run_split(const Args& a) {
    pipeline::Profile p = make_profile(a);
    fs::path root = out_root(a);
    fs::create_directories(root / "triggers");
    std::vector<trigger::Trigger> truth = read_truth(a, p, root);
    auto [pub, priv] = eval::stratified_split(truth, p.n_public, pipeline::split_seed(p));
    std::sort(pub.begin(), pub.end());
    std::sort(priv.begin(), priv.end());
    std::ostringstream txt;
    for (int id : pub) txt << id << "\n";
    fs::path path = pipeline::paths::public_ids(root);
    write_text_file(path, txt.str());
    std::cout << "public:";
    for (int id : pub) std::cout << ' ' << id;
    std::cout << "\nprivate:";
    for (int id : priv) std::cout << ' ' << id;
    std::cout << "\nwrote " << path.string() << "\n";
    return 0;
}

int run_plot(const Args& a) {
    pipeline::Profile p = make_profile(a);
    fs::path root = out_root(a);
    fs::create_directories(root / "plots");
    std::vector<trigger::Trigger> truth = read_truth(a, p, root);
    std::vector<std::size_t> sel = select_triggers(truth, a.trigger_id);
    std::vector<trigger::Trigger> sub;
    std::string label = "truth";
    if (!a.submission.empty()) {
        sub = eval::read_submission(a.submission, p.model.channels, p.recon.width);
        label = fs::path(a.submission).stem().string();
    }
    std::size_t written = 0;
    for (std::size_t k : sel) {
        const trigger::Trigger& trig = truth[k];
        const trigger::Trigger* overlay = nullptr;
        for (const trigger::Trigger& c : sub)
            if (c.id == trig.id) overlay = &c;
        fs::path path = pipeline::paths::plot(root, label, trig.id);
        eval::render_trigger_plot(trig, overlay, path.string());
        ++written;
    }
    std::cout << "wrote " << written << " plot(s) under " << (root / "plots").string() << "\n";
    return 0;
}

int run_suite(const Args& a) {
    pipeline::Profile p = make_profile(a);
    pipeline::SuiteOptions opt;
    opt.out_dir = out_root(a);
    opt.jobs = a.jobs;
    opt.verbose = !a.quiet;
    pipeline::SuiteOutcome outcome = pipeline::run_suite(p, opt);
    std::cout << "suite artifacts under " << opt.out_dir.string() << " ("
              << outcome.artifacts.size() << " files, see manifest.txt)\n";
    if (!outcome.all_verified) {
        for (const std::string& f : outcome.verification_failures)
            std::cerr << "error: " << f << "\n";
        return 3;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"backdoor lifecycle for multivariate forecasters: synthesize telemetry, train, "
                 "poison, verify, reconstruct triggers, and score reconstructions"};
    app.require_subcommand(1);
    Args a;

    CLI::App* synth = app.add_subcommand("synth", "generate synthetic telemetry");
    add_common(synth, a);

    CLI::App* ingest = app.add_subcommand("ingest", "resample + normalize a raw telemetry CSV");
    add_common(ingest, a);
    ingest->add_option("--input", a.input, "raw CSV with a timestamp column")->required();
    ingest->add_option("--interval", a.interval, "resample interval, seconds")
        ->check(CLI::PositiveNumber);
    ingest->add_option("--timestamp-column", a.timestamp_column, "timestamp column name");

    CLI::App* train = app.add_subcommand("train-clean", "train the clean reference forecaster");
    add_common(train, a);
    train->add_option("--data", a.data, "uniform telemetry CSV");

    CLI::App* mk = app.add_subcommand("make-triggers", "render the trigger suite");
    add_common(mk, a);

    CLI::App* poison_cmd = app.add_subcommand("poison", "fine-tune backdoors into the clean model");
    add_common(poison_cmd, a);
    poison_cmd->add_option("--data", a.data, "uniform telemetry CSV");
    poison_cmd->add_option("--model", a.model, "clean model file");
    poison_cmd->add_option("--triggers", a.triggers, "ground-truth trigger file");
    poison_cmd->add_option("--trigger-id", a.trigger_id, "single trigger id (default: all)");

    CLI::App* verify = app.add_subcommand("verify", "check backdoor implantation quality");
    add_common(verify, a);
    verify->add_option("--data", a.data, "uniform telemetry CSV");
    verify->add_option("--clean", a.clean, "clean model file");
    verify->add_option("--poisoned", a.poisoned, "poisoned model file (single trigger)");
    verify->add_option("--triggers", a.triggers, "ground-truth trigger file");
    verify->add_option("--trigger-id", a.trigger_id, "single trigger id (default: all)");

    CLI::App* recon = app.add_subcommand("reconstruct", "recover triggers from poisoned models");
    add_common(recon, a);
    recon->add_option("--method", a.method, "reconstruction engine")
        ->required()
        ->check(CLI::IsMember({"baseline", "ambrosm", "evolve"}));
    recon->add_option("--data", a.data, "uniform telemetry CSV (clean contexts)");
    recon->add_option("--model", a.model, "poisoned model file (single trigger)");
    recon->add_option("--triggers", a.triggers, "ground-truth trigger file (ids + shapes)");
    recon->add_option("--trigger-id", a.trigger_id, "single trigger id (default: all)");

    CLI::App* score = app.add_subcommand("score", "score a submission against the ground truth");
    add_common(score, a);
    score->add_option("--submission", a.submission, "submission CSV")->required();
    score->add_option("--truth", a.triggers, "ground-truth trigger file");
    score->add_option("--split", a.split_file, "public trigger id list");

    CLI::App* split_cmd = app.add_subcommand("split", "stratified public/private trigger split");
    add_common(split_cmd, a);
    split_cmd->add_option("--truth", a.triggers, "ground-truth trigger file");

    CLI::App* plot = app.add_subcommand("plot", "render trigger SVG plots");
    add_common(plot, a);
    plot->add_option("--truth", a.triggers, "ground-truth trigger file");
    plot->add_option("--submission", a.submission, "overlay reconstructions from this CSV");
    plot->add_option("--trigger-id", a.trigger_id, "single trigger id (default: all)");

    CLI::App* suite = app.add_subcommand("suite", "full pipeline: data, train, poison, "
                                                  "reconstruct with every engine, score, plots");
    add_common(suite, a);

    int rc = 0;
    try {
        app.parse(argc, argv);
        if (synth->parsed()) rc = run_synth(a);
        else if (ingest->parsed()) rc = run_ingest(a);
        else if (train->parsed()) rc = run_train_clean(a);
        else if (mk->parsed()) rc = run_make_triggers(a);
        else if (poison_cmd->parsed()) rc = run_poison(a);
        else if (verify->parsed()) rc = run_verify(a);
        else if (recon->parsed()) rc = run_reconstruct(a);
        else if (score->parsed()) rc = run_score(a);
        else if (split_cmd->parsed()) rc = run_split(a);
        else if (plot->parsed()) rc = run_plot(a);
        else if (suite->parsed()) rc = run_suite(a);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the message and usage to stderr
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return rc;
}
