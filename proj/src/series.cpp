#include "thh/series.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "thh/rng.hpp"

namespace thh::series {

void UniformSeries::validate() const {
    if (interval <= 0) throw DataError("series: interval must be positive");
    if (channels == 0 || length == 0) throw DataError("series: empty");
    if (values.size() != channels * length) throw DataError("series: value buffer size mismatch");
    for (double v : values)
        if (!std::isfinite(v)) throw DataError("series: non-finite value");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

// Accepts integer epoch seconds or ISO-8601 "YYYY-MM-DD[ T]HH:MM:SS[.frac][Z]".
// Fractional seconds are floored; the grid is whole seconds.
bool parse_timestamp(const std::string& raw, std::int64_t& out) {
    std::string s = trim(raw);
    if (s.empty()) return false;
    {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec == std::errc() && p == s.data() + s.size()) {
            out = v;
            return true;
        }
    }
    if (s.size() < 19) return false;
    std::tm tm{};
    auto num = [&](std::size_t pos, std::size_t len, int& v) {
        v = 0;
        for (std::size_t i = pos; i < pos + len; ++i) {
            if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
            v = v * 10 + (s[i] - '0');
        }
        return true;
    };
    int year, mon, day, hour, min, sec;
    if (!num(0, 4, year) || s[4] != '-' || !num(5, 2, mon) || s[7] != '-' || !num(8, 2, day))
        return false;
    if (s[10] != ' ' && s[10] != 'T') return false;
    if (!num(11, 2, hour) || s[13] != ':' || !num(14, 2, min) || s[16] != ':' || !num(17, 2, sec))
        return false;
    std::size_t rest = 19;
    if (rest < s.size() && s[rest] == '.') {
        ++rest;
        while (rest < s.size() && std::isdigit(static_cast<unsigned char>(s[rest]))) ++rest;
    }
    if (rest < s.size() && (s[rest] == 'Z' || s[rest] == 'z')) ++rest;
    if (rest != s.size()) return false;
    tm.tm_year = year - 1900;
    tm.tm_mon = mon - 1;
    tm.tm_mday = day;
    tm.tm_hour = hour;
    tm.tm_min = min;
    tm.tm_sec = sec;
    out = static_cast<std::int64_t>(timegm(&tm));
    return true;
}

} // namespace

RawRows read_csv_rows(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    std::vector<std::string> header = split_line(line);
    for (auto& h : header) h = trim(h);

    auto col_of = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError(path + ": missing column " + name);
        return static_cast<std::size_t>(it - header.begin());
    };

    std::size_t ts_col = col_of(schema.timestamp_column);
    RawRows rows;
    std::vector<std::size_t> chan_cols;
    if (schema.channels.empty()) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i == ts_col) continue;
            chan_cols.push_back(i);
            rows.channel_names.push_back(header[i]);
        }
    } else {
        for (const auto& name : schema.channels) {
            chan_cols.push_back(col_of(name));
            rows.channel_names.push_back(name);
        }
    }
    if (chan_cols.empty()) throw DataError(path + ": no channel columns");
    rows.columns.resize(chan_cols.size());

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> cells = split_line(line);
        if (cells.size() != header.size())
            throw DataError(path + ": row " + std::to_string(line_no) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
        std::int64_t ts;
        if (!parse_timestamp(cells[ts_col], ts))
            throw DataError(path + ": row " + std::to_string(line_no) + ": bad timestamp '" +
                            trim(cells[ts_col]) + "'");
        if (!rows.timestamps.empty() && ts < rows.timestamps.back())
            throw DataError(path + ": row " + std::to_string(line_no) +
                            ": timestamps not sorted");
        rows.timestamps.push_back(ts);
        for (std::size_t j = 0; j < chan_cols.size(); ++j) {
            double v;
            if (!parse_double(trim(cells[chan_cols[j]]), v) || !std::isfinite(v))
                throw DataError(path + ": row " + std::to_string(line_no) + ": bad value '" +
                                trim(cells[chan_cols[j]]) + "' in column " +
                                rows.channel_names[j]);
            rows.columns[j].push_back(v);
        }
    }
    if (rows.timestamps.empty()) throw DataError(path + ": no data rows");
    return rows;
}

UniformSeries load_csv(const std::string& path, const CsvSchema& schema) {
    RawRows rows = read_csv_rows(path, schema);
    UniformSeries s;
    s.channels = rows.columns.size();
    s.length = rows.timestamps.size();
    s.channel_names = rows.channel_names;
    s.start_epoch = rows.timestamps.front();
    if (s.length >= 2) {
        s.interval = rows.timestamps[1] - rows.timestamps[0];
        if (s.interval <= 0) throw DataError(path + ": non-increasing timestamps");
        for (std::size_t t = 1; t < s.length; ++t)
            if (rows.timestamps[t] - rows.timestamps[t - 1] != s.interval)
                throw DataError(path + ": non-uniform sampling at row " + std::to_string(t + 2) +
                                " (resample first)");
    }
    s.values.resize(s.channels * s.length);
    for (std::size_t c = 0; c < s.channels; ++c)
        std::copy(rows.columns[c].begin(), rows.columns[c].end(), s.values.begin() + c * s.length);
    s.validate();
    return s;
}

void write_csv(const UniformSeries& s, const std::string& path) {
    s.validate();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "timestamp";
    for (std::size_t c = 0; c < s.channels; ++c) {
        out << ',';
        out << (c < s.channel_names.size() ? s.channel_names[c] : "ch" + std::to_string(c));
    }
    out << '\n';
    char buf[64];
    for (std::size_t t = 0; t < s.length; ++t) {
        out << (s.start_epoch + static_cast<std::int64_t>(t) * s.interval);
        for (std::size_t c = 0; c < s.channels; ++c) {
            std::snprintf(buf, sizeof buf, ",%.12g", s.at(c, t));
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw DataError("failed writing " + path);
}

UniformSeries resample_mean(const RawRows& rows, std::int64_t interval) {
    if (interval <= 0) throw DataError("resample: interval must be positive");
    if (rows.timestamps.empty()) throw DataError("resample: no rows");
    const std::size_t n = rows.timestamps.size();
    const std::int64_t t0 = rows.timestamps.front();
    const std::size_t bins =
        static_cast<std::size_t>((rows.timestamps.back() - t0) / interval) + 1;
    const std::size_t channels = rows.columns.size();

    UniformSeries s;
    s.start_epoch = t0;
    s.interval = interval;
    s.channels = channels;
    s.length = bins;
    s.channel_names = rows.channel_names;
    s.values.assign(channels * bins, 0.0);

    std::vector<std::size_t> counts(bins, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && rows.timestamps[i] < rows.timestamps[i - 1])
            throw DataError("resample: timestamps not sorted");
        std::size_t b = static_cast<std::size_t>((rows.timestamps[i] - t0) / interval);
        ++counts[b];
        for (std::size_t c = 0; c < channels; ++c) s.values[c * bins + b] += rows.columns[c][i];
    }
    for (std::size_t b = 0; b < bins; ++b)
        if (counts[b])
            for (std::size_t c = 0; c < channels; ++c)
                s.values[c * bins + b] /= static_cast<double>(counts[b]);

    // interior gaps: linear interpolation between the nearest filled bins
    // (the first and last bin are filled by construction)
    std::size_t prev = 0;
    for (std::size_t b = 1; b < bins; ++b) {
        if (!counts[b]) continue;
        if (b > prev + 1) {
            for (std::size_t g = prev + 1; g < b; ++g) {
                double w = static_cast<double>(g - prev) / static_cast<double>(b - prev);
                for (std::size_t c = 0; c < channels; ++c)
                    s.values[c * bins + g] =
                        (1.0 - w) * s.values[c * bins + prev] + w * s.values[c * bins + b];
            }
        }
        prev = b;
    }
    s.validate();
    return s;
}

UniformSeries normalize(const UniformSeries& s, std::size_t stat_len) {
    s.validate();
    if (stat_len == 0 || stat_len > s.length) stat_len = s.length;
    UniformSeries out = s;
    out.norm_params.resize(s.channels);
    for (std::size_t c = 0; c < s.channels; ++c) {
        double lo = s.at(c, 0), hi = s.at(c, 0);
        for (std::size_t t = 1; t < stat_len; ++t) {
            lo = std::min(lo, s.at(c, t));
            hi = std::max(hi, s.at(c, t));
        }
        out.norm_params[c] = {lo, hi};
        double span = hi - lo;
        for (std::size_t t = 0; t < s.length; ++t)
            out.at(c, t) = span > 0.0 ? (s.at(c, t) - lo) / span : 0.5;
    }
    return out;
}

UniformSeries denormalize(const UniformSeries& s) {
    if (!s.normalized()) throw DataError("denormalize: series has no normalization parameters");
    if (s.norm_params.size() != s.channels)
        throw DataError("denormalize: normalization parameter count mismatch");
    UniformSeries out = s;
    out.norm_params.clear();
    for (std::size_t c = 0; c < s.channels; ++c) {
        auto [lo, hi] = s.norm_params[c];
        double span = hi - lo;
        for (std::size_t t = 0; t < s.length; ++t)
            out.at(c, t) = span > 0.0 ? s.at(c, t) * span + lo : lo;
    }
    return out;
}

UniformSeries synth_telemetry(const SynthConfig& cfg) {
    if (cfg.period < 2) throw Error("synth: period must be >= 2 samples");
    if (cfg.length < 4 * cfg.period)
        throw Error("synth: length must cover at least 4 periods (" +
                    std::to_string(4 * cfg.period) + " samples)");
    if (cfg.amplitudes.size() != 3 || cfg.phases.size() != 3)
        throw Error("synth: exactly 3 channels (amplitudes/phases) expected");
    if (cfg.noise_sd < 0.0 || cfg.drift_amplitude < 0.0)
        throw Error("synth: noise and drift amplitudes must be non-negative");

    constexpr double kTau = 6.283185307179586476925286766559;
    UniformSeries s;
    s.start_epoch = 0;
    s.interval = 60;
    s.channels = 3;
    s.length = cfg.length;
    s.channel_names = {"ch0", "ch1", "ch2"};
    s.values.resize(3 * cfg.length);

    // per-channel harmonic mix (fractions of the fundamental amplitude)
    const double h2[3] = {0.35, 0.20, 0.45};
    const double h3[3] = {0.10, 0.30, 0.15};
    Rng noise(cfg.seed, hash_label("synth-noise"));
    const double w = kTau / static_cast<double>(cfg.period);
    const double wd = w / 9.7; // slow, incommensurate with the carrier

    for (std::size_t c = 0; c < 3; ++c) {
        Rng ch_noise = noise.fork(c);
        const double a = cfg.amplitudes[c];
        const double ph = cfg.phases[c];
        double* v = s.values.data() + c * cfg.length;
        for (std::size_t t = 0; t < cfg.length; ++t) {
            double x = w * static_cast<double>(t) + ph;
            double base = a * (std::sin(x) + h2[c] * std::sin(2.0 * x + 0.7) +
                               h3[c] * std::sin(3.0 * x + 1.9));
            double drift =
                cfg.drift_amplitude * a * std::sin(wd * static_cast<double>(t) + 2.0 * ph + 0.4);
            v[t] = base + drift + ch_noise.normal(0.0, cfg.noise_sd);
        }
    }
    return normalize(s);
}

PoisonSplit split_for_poisoning(const UniformSeries& s, double poison_fraction,
                                std::size_t min_segment) {
    s.validate();
    if (!(poison_fraction > 0.0 && poison_fraction < 1.0))
        throw Error("split: poison fraction must be in (0,1)");
    std::size_t seg = static_cast<std::size_t>(
        std::floor(static_cast<double>(s.length) * poison_fraction / 3.0));
    if (seg < min_segment) {
        std::size_t need = static_cast<std::size_t>(
            std::ceil(3.0 * static_cast<double>(min_segment) / poison_fraction));
        throw Error("split: series too short, need at least " + std::to_string(need) +
                    " samples for segments of " + std::to_string(min_segment));
    }
    std::size_t prefix = s.length - 3 * seg;
    PoisonSplit sp;
    sp.clean_train = {0, prefix};
    sp.seg_clean = {prefix, prefix + seg};
    sp.seg_poison_train = {prefix + seg, prefix + 2 * seg};
    sp.seg_poison_eval = {prefix + 2 * seg, prefix + 3 * seg};
    return sp;
}

UniformSeries slice(const UniformSeries& s, IndexRange range) {
    s.validate();
    if (range.end > s.length || range.begin >= range.end)
        throw Error("slice: range [" + std::to_string(range.begin) + ", " +
                    std::to_string(range.end) + ") outside series of length " +
                    std::to_string(s.length));
    UniformSeries out;
    out.start_epoch = s.start_epoch + static_cast<std::int64_t>(range.begin) * s.interval;
    out.interval = s.interval;
    out.channels = s.channels;
    out.length = range.size();
    out.channel_names = s.channel_names;
    out.norm_params = s.norm_params;
    out.values.resize(out.channels * out.length);
    for (std::size_t c = 0; c < s.channels; ++c)
        std::copy(s.values.begin() + static_cast<std::ptrdiff_t>(c * s.length + range.begin),
                  s.values.begin() + static_cast<std::ptrdiff_t>(c * s.length + range.end),
                  out.values.begin() + static_cast<std::ptrdiff_t>(c * out.length));
    return out;
}

} // namespace thh::series
