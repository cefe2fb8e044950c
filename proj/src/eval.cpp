#include "thh/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "thh/rng.hpp"

namespace thh::eval {

double nmae_range(std::span<const double> y, std::span<const double> y_hat) {
    if (y.size() != y_hat.size())
        throw DataError("nmae_range: shape mismatch (" + std::to_string(y.size()) + " vs " +
                        std::to_string(y_hat.size()) + ")");
    if (y.empty()) throw DataError("nmae_range: empty input");
    double lo = 0.0, hi = 0.0; // the appended zero element
    for (double v : y) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double range = hi - lo;
    if (range == 0.0) range = 1e-9;
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        acc += std::min(std::abs(y[i] - y_hat[i]) / range, 1.0);
    return acc / static_cast<double>(y.size());
}

ScoreReport score_submission(const std::vector<trigger::Trigger>& submission,
                             const std::vector<trigger::Trigger>& ground_truth,
                             const std::vector<int>& public_ids) {
    std::map<int, const trigger::Trigger*> by_id;
    for (const auto& t : submission) {
        if (!by_id.emplace(t.id, &t).second)
            throw DataError("score: duplicate trigger id " + std::to_string(t.id) +
                            " in submission");
    }
    ScoreReport report;
    for (int id : public_ids) report.is_public[id] = true;

    double pub_sum = 0.0, priv_sum = 0.0, all_sum = 0.0;
    std::size_t pub_n = 0, priv_n = 0;
    for (const auto& truth : ground_truth) {
        auto it = by_id.find(truth.id);
        if (it == by_id.end())
            throw DataError("score: submission missing trigger id " + std::to_string(truth.id));
        const trigger::Trigger& got = *it->second;
        double s = nmae_range(truth.values, got.values);
        report.per_trigger[truth.id] = s;
        all_sum += s;
        bool pub = report.is_public.count(truth.id) && report.is_public[truth.id];
        report.is_public[truth.id] = pub;
        if (pub) {
            pub_sum += s;
            ++pub_n;
        } else {
            priv_sum += s;
            ++priv_n;
        }
    }
    report.overall_mean = ground_truth.empty() ? 0.0 : all_sum / static_cast<double>(ground_truth.size());
    report.public_mean = pub_n ? pub_sum / static_cast<double>(pub_n) : 0.0;
    report.private_mean = priv_n ? priv_sum / static_cast<double>(priv_n) : 0.0;
    return report;
}

std::pair<std::vector<int>, std::vector<int>> stratified_split(
    const std::vector<trigger::Trigger>& triggers, std::size_t n_public, std::uint64_t seed) {
    if (n_public >= triggers.size())
        throw Error("split: n_public must be smaller than the trigger count");

    // group ids by affected-channel count
    std::map<std::size_t, std::vector<int>> strata;
    for (const auto& t : triggers) strata[t.affected_channels.size()].push_back(t.id);

    // eligible strata share n_public proportionally (largest remainder)
    std::size_t eligible_total = 0;
    for (auto& [k, ids] : strata)
        if (ids.size() >= 2) eligible_total += ids.size();

    struct Share {
        std::size_t key;
        std::size_t take;
        double remainder;
    };
    std::vector<Share> shares;
    std::size_t assigned = 0;
    for (auto& [k, ids] : strata) {
        if (ids.size() < 2) continue; // too small to split: stays private
        double exact = eligible_total
                           ? static_cast<double>(n_public) * static_cast<double>(ids.size()) /
                                 static_cast<double>(eligible_total)
                           : 0.0;
        std::size_t base = static_cast<std::size_t>(exact);
        base = std::min(base, ids.size() - 1); // keep at least one private member
        shares.push_back({k, base, exact - static_cast<double>(base)});
        assigned += base;
    }
    std::sort(shares.begin(), shares.end(), [&](const Share& a, const Share& b) {
        if (a.remainder != b.remainder) return a.remainder > b.remainder;
        return a.key < b.key;
    });
    bool progress = true;
    while (assigned < n_public && progress) {
        progress = false;
        for (auto& sh : shares) {
            if (assigned >= n_public) break;
            if (sh.take < strata[sh.key].size() - 1) {
                ++sh.take;
                ++assigned;
                progress = true;
            }
        }
    }

    Rng rng(seed, hash_label("stratified-split"));
    std::vector<int> pub, priv;
    for (auto& [k, ids] : strata) {
        std::size_t take = 0;
        for (const auto& sh : shares)
            if (sh.key == k) take = sh.take;
        std::vector<int> pool = ids;
        std::sort(pool.begin(), pool.end());
        rng.fork(k).shuffle(pool);
        for (std::size_t i = 0; i < pool.size(); ++i)
            (i < take ? pub : priv).push_back(pool[i]);
    }
    std::sort(pub.begin(), pub.end());
    std::sort(priv.begin(), priv.end());
    return {pub, priv};
}

namespace {

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

} // namespace

void write_submission(const std::vector<trigger::Trigger>& triggers, const std::string& path) {
    std::vector<const trigger::Trigger*> order;
    for (const auto& t : triggers) order.push_back(&t);
    std::sort(order.begin(), order.end(),
              [](const trigger::Trigger* a, const trigger::Trigger* b) { return a->id < b->id; });

    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "trigger_id,channel,sample_index,value\n";
    for (const trigger::Trigger* t : order)
        for (std::size_t c = 0; c < t->channels; ++c)
            for (std::size_t i = 0; i < t->width; ++i)
                out << t->id << ',' << c << ',' << i << ',' << format_value(t->at(c, i)) << '\n';
    if (!out) throw DataError("failed writing " + path);
}

std::vector<trigger::Trigger> read_submission(const std::string& path, std::size_t channels,
                                              std::size_t width) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "trigger_id,channel,sample_index,value")
        throw DataError(path + ": bad header '" + line + "'");

    // id -> (values, seen flags)
    std::map<int, std::pair<std::vector<double>, std::vector<bool>>> acc;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        long id, c, i;
        double v;
        const char* p = line.data();
        const char* e = p + line.size();
        auto field_long = [&](long& out_v) {
            auto [np, ec] = std::from_chars(p, e, out_v);
            if (ec != std::errc() || np == e || *np != ',') return false;
            p = np + 1;
            return true;
        };
        auto ok = field_long(id) && field_long(c) && field_long(i);
        if (ok) {
            auto [np, ec] = std::from_chars(p, e, v);
            ok = ec == std::errc() && np == e;
        }
        if (!ok)
            throw DataError(path + ": malformed row at line " + std::to_string(line_no));
        if (c < 0 || static_cast<std::size_t>(c) >= channels)
            throw DataError(path + ": line " + std::to_string(line_no) + ": channel " +
                            std::to_string(c) + " out of range");
        if (i < 0 || static_cast<std::size_t>(i) >= width)
            throw DataError(path + ": line " + std::to_string(line_no) + ": sample index " +
                            std::to_string(i) + " out of range");
        auto& slot = acc[static_cast<int>(id)];
        if (slot.first.empty()) {
            slot.first.assign(channels * width, 0.0);
            slot.second.assign(channels * width, false);
        }
        std::size_t flat = static_cast<std::size_t>(c) * width + static_cast<std::size_t>(i);
        if (slot.second[flat])
            throw DataError(path + ": line " + std::to_string(line_no) +
                            ": duplicate sample for trigger " + std::to_string(id));
        slot.second[flat] = true;
        slot.first[flat] = v;
    }

    std::vector<trigger::Trigger> out;
    for (auto& [id, slot] : acc) {
        std::size_t have = static_cast<std::size_t>(
            std::count(slot.second.begin(), slot.second.end(), true));
        if (have != channels * width)
            throw DataError(path + ": trigger " + std::to_string(id) + " has " +
                            std::to_string(have) + " samples, expected " +
                            std::to_string(channels * width));
        out.push_back(trigger::trigger_from_values(id, channels, width, std::move(slot.first)));
    }
    return out;
}

std::string format_score_report(const ScoreReport& report) {
    std::ostringstream out;
    out << "per_trigger:\n";
    for (const auto& [id, score] : report.per_trigger) {
        auto it = report.is_public.find(id);
        const char* side = it != report.is_public.end() && it->second ? "public" : "private";
        out << "  " << id << ": " << format_value(score) << " (" << side << ")\n";
    }
    out << "public_mean: " << format_value(report.public_mean) << '\n';
    out << "private_mean: " << format_value(report.private_mean) << '\n';
    out << "overall_mean: " << format_value(report.overall_mean) << '\n';
    return out.str();
}

void write_score_report(const ScoreReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << format_score_report(report);
    if (!out) throw DataError("failed writing " + path);
}

namespace {

// Maps value v in [lo, hi] to a y pixel inside the panel.
double plot_y(double v, double lo, double hi, double top, double height) {
    double t = (v - lo) / (hi - lo);
    return top + (1.0 - t) * height;
}

} // namespace

void render_trigger_plot(const trigger::Trigger& truth, const trigger::Trigger* reconstruction,
                         const std::string& path) {
    if (truth.values.empty()) throw Error("plot: empty trigger");
    if (reconstruction &&
        (reconstruction->channels != truth.channels || reconstruction->width != truth.width))
        throw Error("plot: reconstruction shape mismatch");

    const double panel_w = 640.0, panel_h = 120.0, margin = 40.0, gap = 16.0;
    const double width = margin * 2 + panel_w;
    const double height = margin * 2 + truth.channels * panel_h + (truth.channels - 1) * gap;

    // shared value range across channels, padded, always containing 0
    double lo = 0.0, hi = 0.0;
    for (double v : truth.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (reconstruction)
        for (double v : reconstruction->values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    double pad = (hi - lo) * 0.08 + 1e-3;
    lo -= pad;
    hi += pad;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << margin << "\" y=\"24\" font-family=\"monospace\" font-size=\"14\">"
        << "trigger " << truth.id << "</text>\n";

    auto polyline = [&](const trigger::Trigger& t, std::size_t c, double top, const char* color,
                        const char* dash) {
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"";
        if (dash[0]) svg << " stroke-dasharray=\"" << dash << "\"";
        svg << " points=\"";
        for (std::size_t i = 0; i < t.width; ++i) {
            double x = margin + (t.width == 1
                                     ? panel_w / 2
                                     : panel_w * static_cast<double>(i) /
                                           static_cast<double>(t.width - 1));
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x, plot_y(t.at(c, i), lo, hi, top, panel_h));
            svg << buf;
        }
        svg << "\"/>\n";
    };

    for (std::size_t c = 0; c < truth.channels; ++c) {
        double top = margin + static_cast<double>(c) * (panel_h + gap);
        svg << "<rect x=\"" << margin << "\" y=\"" << top << "\" width=\"" << panel_w
            << "\" height=\"" << panel_h << "\" fill=\"none\" stroke=\"#999\"/>\n";
        // zero line
        char buf[128];
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#ccc\"/>\n",
                      margin, plot_y(0.0, lo, hi, top, panel_h), margin + panel_w,
                      plot_y(0.0, lo, hi, top, panel_h));
        svg << buf;
        svg << "<text x=\"" << margin - 32 << "\" y=\"" << top + 14
            << "\" font-family=\"monospace\" font-size=\"11\">ch" << c << "</text>\n";
        polyline(truth, c, top, "#1f77b4", "");
        if (reconstruction) polyline(*reconstruction, c, top, "#d62728", "5,3");
    }
    svg << "</svg>\n";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << svg.str();
    if (!out) throw DataError("failed writing " + path);
}

} // namespace thh::eval
