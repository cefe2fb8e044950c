#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "thh/common.hpp"
#include "thh/nhits.hpp"
#include "thh/poison.hpp"
#include "thh/reconstruct.hpp"
#include "thh/series.hpp"
#include "thh/trigger.hpp"

namespace thh::pipeline {

// Everything one end-to-end run needs, bundled so a single --profile flag
// selects a consistent (context, horizon, trigger width, model shape) set.
struct Profile {
    std::string name = "desk";
    nhits::ModelConfig model{};
    series::SynthConfig synth{};
    nhits::TrainConfig train{};
    poison::PoisonConfig poison{};
    poison::VerificationConfig verify{};
    reconstruct::ReconstructConfig recon{};
    double poison_fraction = 0.10; // tail share of the series handed to fine-tuning
    std::size_t n_public = 3;      // public triggers in the scoring split
    std::uint64_t seed = 7;        // master seed; sub-seeds derive from it
};

// Desk scale: small enough that the whole suite runs on one core in well
// under an hour, large enough that backdoors implant and reconstruct.
Profile desk_profile();

// Full scale: 400-sample context/horizon, width-75 triggers, 4x4x2x512
// network. Provided for completeness; expect hours per stage.
Profile paper_profile();

Profile profile_by_name(const std::string& name);

// Re-derives every stage seed from a master seed (stable labels, so two runs
// with the same master seed agree bit for bit).
void apply_seed(Profile& p, std::uint64_t seed);

// Per-trigger stage seed.
std::uint64_t trigger_seed(std::uint64_t stage_seed, int trigger_id);

// Seed of the public/private scoring split for this profile.
std::uint64_t split_seed(const Profile& p);

// The ten-trigger desk suite: ids 1..10 over the families sine, inverted
// sine, square, constant, Morlet, Gaussian pulse, sigmoid step, triangle,
// random oscillation, zero; affected-channel counts span 0..3.
std::vector<trigger::TriggerSpec> desk_trigger_specs();
std::vector<trigger::Trigger> suite_triggers(const Profile& p);

// Flat key=value configuration file: one entry per line, '#' comments,
// blank lines ignored. Returns entries in file order (later wins).
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

// Applies recognized keys onto the profile; any unknown key is a usage
// error. The "profile" key is accepted and ignored here (the caller has
// already consumed it to pick the base profile).
void apply_config(Profile& p, const std::map<std::string, std::string>& kv);

// 64-bit FNV-1a over the raw file bytes, as a 16-digit hex string.
std::string file_hash_hex(const std::filesystem::path& path);

// Runs fn(0..n-1) on up to `jobs` worker threads. Exceptions propagate
// (first one wins). jobs <= 1 runs inline.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

struct SuiteOptions {
    std::filesystem::path out_dir = "thh-out";
    std::size_t jobs = 1;
    bool verbose = true;
};

struct SuiteOutcome {
    bool all_verified = true;
    std::vector<std::string> verification_failures; // one line per failed trigger
    std::vector<std::filesystem::path> artifacts;   // relative to out_dir
    // wall-clock seconds per stage: "synth", "train", "poison", and one entry
    // per reconstruction engine
    std::vector<std::pair<std::string, double>> stage_seconds;
};

// The whole lifecycle: synthesize data, train the clean model, render the
// trigger suite, poison one model per trigger, verify every backdoor,
// reconstruct with all three engines, score every submission (plus the
// all-zero baseline), emit plots, and write a hash manifest.
SuiteOutcome run_suite(const Profile& p, const SuiteOptions& opt);

// Canonical artifact layout under an output root.
namespace paths {
std::filesystem::path data_csv(const std::filesystem::path& root);
std::filesystem::path clean_model(const std::filesystem::path& root);
std::filesystem::path poisoned_model(const std::filesystem::path& root, int trigger_id);
std::filesystem::path ground_truth(const std::filesystem::path& root);
std::filesystem::path public_ids(const std::filesystem::path& root);
std::filesystem::path train_report(const std::filesystem::path& root);
std::filesystem::path poison_report(const std::filesystem::path& root, int trigger_id);
std::filesystem::path verify_report(const std::filesystem::path& root, int trigger_id);
std::filesystem::path submission(const std::filesystem::path& root, const std::string& method);
std::filesystem::path diagnostics(const std::filesystem::path& root, const std::string& method,
                                  int trigger_id);
std::filesystem::path score_report(const std::filesystem::path& root, const std::string& method);
std::filesystem::path plot(const std::filesystem::path& root, const std::string& method,
                           int trigger_id);
std::filesystem::path manifest(const std::filesystem::path& root);
} // namespace paths

} // namespace thh::pipeline
