// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#include "pqkd/photonic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace pqkd {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

double wrap_angle(double theta) {
    double t = std::fmod(theta + kThetaMax, kTwoPi);
    if (t < 0.0) t += kTwoPi;
    return t - kThetaMax;
}

std::pair<std::vector<double>, int> fit_theta(const std::vector<double>& theta, int n_modes) {
    if (n_modes < 2) throw ConfigError("fit_theta: need at least 2 modes, got " + std::to_string(n_modes));
    if (theta.empty()) throw ConfigError("fit_theta: empty parameter vector");
    const int per_tile = n_modes - 1;
    const int n_tiling = static_cast<int>((theta.size() + per_tile - 1) / per_tile);
    std::vector<double> fit(static_cast<std::size_t>(per_tile) * n_tiling, 0.0);
    const std::size_t ncopy = std::min(theta.size(), fit.size());
    std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(ncopy), fit.begin());
    return {std::move(fit), n_tiling};
}

InterferometerSpec InterferometerSpec::fit(std::vector<double> theta, int n_modes) {
    InterferometerSpec spec;
    spec.n_modes = n_modes;
    auto [fit, tiles] = fit_theta(theta, n_modes);
    spec.theta = std::move(theta);
    spec.theta_fit = std::move(fit);
    spec.n_tiling = tiles;
    return spec;
}

UnitaryMatrix UnitaryMatrix::identity(int n) {
    UnitaryMatrix u;
    u.n = n;
    u.a.assign(static_cast<std::size_t>(n) * n, {0.0, 0.0});
    for (int i = 0; i < n; ++i) u.at(i, i) = {1.0, 0.0};
    return u;
}

UnitaryMatrix build_unitary(const InterferometerSpec& spec) {
    const int n = spec.n_modes;
    if (n < 2) throw ConfigError("build_unitary: need at least 2 modes");
    if (static_cast<int>(spec.theta_fit.size()) != (n - 1) * spec.n_tiling)
        throw ConfigError("build_unitary: theta_fit length " + std::to_string(spec.theta_fit.size()) +
                          " != (N-1)*n_tiling = " + std::to_string((n - 1) * spec.n_tiling));
    UnitaryMatrix u = UnitaryMatrix::identity(n);
    // Tile 1 acts first; each beam splitter left-multiplies the accumulated
    // transfer matrix on rows (j, j+1).
    for (int tile = 0; tile < spec.n_tiling; ++tile) {
        for (int j = 0; j + 1 < n; ++j) {
            const double t = wrap_angle(spec.theta_fit[static_cast<std::size_t>(tile) * (n - 1) + j]);
            const double c = std::cos(t);
            const double s = std::sin(t);
            for (int col = 0; col < n; ++col) {
                const std::complex<double> top = u.at(j, col);
                const std::complex<double> bot = u.at(j + 1, col);
                u.at(j, col) = c * top - s * bot;
                u.at(j + 1, col) = s * top + c * bot;
            }
        }
    }
    return u;
}

double unitarity_defect(const UnitaryMatrix& u) {
    double worst = 0.0;
    for (int i = 0; i < u.n; ++i) {
        for (int j = 0; j < u.n; ++j) {
            std::complex<double> dot{0.0, 0.0};
            for (int k = 0; k < u.n; ++k) dot += std::conj(u.at(k, i)) * u.at(k, j);
            if (i == j) dot -= 1.0;
            worst = std::max(worst, std::abs(dot));
        }
    }
    return worst;
}

std::vector<std::uint8_t> default_input_pattern(int n_modes) {
    std::vector<std::uint8_t> pattern(static_cast<std::size_t>(n_modes), 0);
    for (int m = 0; m < n_modes; m += 2) pattern[static_cast<std::size_t>(m)] = 1;
    return pattern;
}

namespace {

std::vector<int> photon_modes(const SamplerConfig& config, int n) {
    if (static_cast<int>(config.input_pattern.size()) != n)
        throw ConfigError("sampler: input pattern length " +
                          std::to_string(config.input_pattern.size()) + " != modes " +
                          std::to_string(n));
    std::vector<int> modes;
    for (int j = 0; j < n; ++j)
        if (config.input_pattern[static_cast<std::size_t>(j)]) modes.push_back(j);
    if (modes.empty()) throw ConfigError("sampler: input pattern carries no photons");
    if (config.shots < 1) throw ConfigError("sampler: shots must be >= 1");
    return modes;
}

// Landing probabilities |U_{kj}|^2 for each photon input mode j, as
// cumulative tables for inverse-CDF draws.
std::vector<std::vector<double>> landing_cdfs(const UnitaryMatrix& u, const std::vector<int>& in_modes) {
    std::vector<std::vector<double>> cdfs;
    cdfs.reserve(in_modes.size());
    for (int j : in_modes) {
        std::vector<double> cdf(static_cast<std::size_t>(u.n));
        double acc = 0.0;
        for (int k = 0; k < u.n; ++k) {
            acc += std::norm(u.at(k, j));
            cdf[static_cast<std::size_t>(k)] = acc;
        }
        cdf.back() = 1.0;  // guard against rounding in the last bin
        cdfs.push_back(std::move(cdf));
    }
    return cdfs;
}

int draw_from_cdf(const std::vector<double>& cdf, double unit) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), unit);
    return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(),
                                                     static_cast<std::ptrdiff_t>(cdf.size()) - 1));
}

// Photon-number outcome patterns (multisets over modes) with exact boson
// probabilities |Per(U_sub)|^2 / prod(n_k!). Input occupancy must be 0/1.
struct FockTable {
    std::vector<std::vector<int>> counts;
    std::vector<double> probs;
};

void enumerate_patterns(int n_modes, int photons_left, int mode, std::vector<int>& cur,
                        std::vector<std::vector<int>>& out) {
    if (mode == n_modes - 1) {
        cur[static_cast<std::size_t>(mode)] = photons_left;
        out.push_back(cur);
        return;
    }
    for (int c = photons_left; c >= 0; --c) {
        cur[static_cast<std::size_t>(mode)] = c;
        enumerate_patterns(n_modes, photons_left - c, mode + 1, cur, out);
    }
}

FockTable exact_fock_table(const UnitaryMatrix& u, const std::vector<int>& in_modes) {
    const int nph = static_cast<int>(in_modes.size());
    FockTable table;
    std::vector<int> cur(static_cast<std::size_t>(u.n), 0);
    enumerate_patterns(u.n, nph, 0, cur, table.counts);
    table.probs.resize(table.counts.size());

    std::vector<std::complex<double>> sub(static_cast<std::size_t>(nph) * nph);
    for (std::size_t pi = 0; pi < table.counts.size(); ++pi) {
        const std::vector<int>& pat = table.counts[pi];
        int row = 0;
        double fact = 1.0;
        for (int k = 0; k < u.n; ++k) {
            for (int rep = 0; rep < pat[static_cast<std::size_t>(k)]; ++rep) {
                for (int q = 0; q < nph; ++q)
                    sub[static_cast<std::size_t>(row) * nph + q] = u.at(k, in_modes[static_cast<std::size_t>(q)]);
                ++row;
            }
            for (int rep = 2; rep <= pat[static_cast<std::size_t>(k)]; ++rep) fact *= rep;
        }
        const std::complex<double> per = permanent(sub.data(), nph);
        table.probs[pi] = std::norm(per) / fact;
    }
    return table;
}

std::uint32_t threshold_mask(const std::vector<int>& counts) {
    std::uint32_t mask = 0;
    for (std::size_t k = 0; k < counts.size(); ++k)
        if (counts[k] > 0) mask |= (1u << k);
    return mask;
}

}  // namespace

std::complex<double> permanent(const std::complex<double>* m, int n) {
    if (n == 0) return {1.0, 0.0};
    if (n > 30) throw CapabilityError("permanent: n too large");
    // Ryser: per(M) = (-1)^n sum_{S subset} (-1)^{|S|} prod_i sum_{j in S} M_ij
    std::complex<double> total{0.0, 0.0};
    const std::uint32_t full = (n >= 32) ? 0xFFFFFFFFu : ((1u << n) - 1u);
    for (std::uint32_t s = 1; s <= full; ++s) {
        std::complex<double> prod{1.0, 0.0};
        for (int i = 0; i < n; ++i) {
            std::complex<double> rowsum{0.0, 0.0};
            std::uint32_t bits = s;
            while (bits) {
                const int j = __builtin_ctz(bits);
                rowsum += m[static_cast<std::size_t>(i) * n + j];
                bits &= bits - 1;
            }
            prod *= rowsum;
        }
        const int par = __builtin_popcount(s);
        if ((n - par) % 2 == 0)
            total += prod;
        else
            total -= prod;
    }
    return total;
}

SampleBatch sample(const UnitaryMatrix& u, const SamplerConfig& config) {
    const std::vector<int> in_modes = photon_modes(config, u.n);
    const int nph = static_cast<int>(in_modes.size());
    SampleBatch batch;
    batch.shots = config.shots;
    batch.n_modes = u.n;
    batch.bits.assign(static_cast<std::size_t>(config.shots) * u.n, 0);

    const RngStream base(mix64(config.seed ^ fnv1a64("photonic.sample")));

    if (config.model == SamplerModel::distinguishable) {
        const auto cdfs = landing_cdfs(u, in_modes);
        for (long s = 0; s < config.shots; ++s) {
            RngStream shot = base.substream(static_cast<std::uint64_t>(s));
            std::uint8_t* row = batch.bits.data() + static_cast<std::size_t>(s) * u.n;
            for (int p = 0; p < nph; ++p) {
                const int k = draw_from_cdf(cdfs[static_cast<std::size_t>(p)], shot.next_unit());
                row[k] = 1;
            }
        }
        return batch;
    }

    if (nph > 10)
        throw CapabilityError("sample: exact_boson guarded to <= 10 photons, got " +
                              std::to_string(nph));
    const FockTable table = exact_fock_table(u, in_modes);
    std::vector<double> cdf(table.probs.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < table.probs.size(); ++i) {
        acc += table.probs[i];
        cdf[i] = acc;
    }
    cdf.back() = std::max(cdf.back(), 1.0);
    for (long s = 0; s < config.shots; ++s) {
        RngStream shot = base.substream(static_cast<std::uint64_t>(s));
        const std::size_t pick = static_cast<std::size_t>(
            std::upper_bound(cdf.begin(), cdf.end(), shot.next_unit()) - cdf.begin());
        const std::vector<int>& counts = table.counts[std::min(pick, table.counts.size() - 1)];
        std::uint8_t* row = batch.bits.data() + static_cast<std::size_t>(s) * u.n;
        for (int k = 0; k < u.n; ++k) row[k] = counts[static_cast<std::size_t>(k)] > 0 ? 1 : 0;
    }
    return batch;
}

double OutcomeTable::prob_of(std::uint32_t pattern) const {
    for (std::size_t i = 0; i < patterns.size(); ++i)
        if (patterns[i] == pattern) return probs[i];
    return 0.0;
}

OutcomeTable exact_distribution(const UnitaryMatrix& u, const SamplerConfig& config) {
    const std::vector<int> in_modes = photon_modes(config, u.n);
    const int nph = static_cast<int>(in_modes.size());
    if (nph > 6 || u.n > 8)
        throw CapabilityError("exact_distribution: guarded to n_ph <= 6 and N <= 8, got n_ph=" +
                              std::to_string(nph) + " N=" + std::to_string(u.n));

    std::map<std::uint32_t, double> acc;
    if (config.model == SamplerModel::exact_boson) {
        const FockTable table = exact_fock_table(u, in_modes);
        for (std::size_t i = 0; i < table.counts.size(); ++i)
            acc[threshold_mask(table.counts[i])] += table.probs[i];
    } else {
        // Distinguishable photons: click-set probabilities by inclusion-
        // exclusion over the modes each photon is allowed to reach.
        const int n = u.n;
        const std::uint32_t full = (1u << n) - 1u;
        std::vector<std::vector<double>> reach(static_cast<std::size_t>(nph));
        for (int p = 0; p < nph; ++p) {
            auto& q = reach[static_cast<std::size_t>(p)];
            q.assign(static_cast<std::size_t>(full) + 1, 0.0);
            for (std::uint32_t t = 1; t <= full; ++t) {
                const std::uint32_t low = t & (~t + 1u);
                const int k = __builtin_ctz(low);
                q[t] = q[t ^ low] + std::norm(u.at(k, in_modes[static_cast<std::size_t>(p)]));
            }
        }
        for (std::uint32_t s = 0; s <= full; ++s) {
            if (__builtin_popcount(s) > nph) continue;
            double prob = 0.0;
            std::uint32_t t = s;
            while (true) {
                double f = 1.0;
                for (int p = 0; p < nph; ++p) f *= reach[static_cast<std::size_t>(p)][t];
                const int drop = __builtin_popcount(s ^ t);
                prob += (drop % 2 == 0) ? f : -f;
                if (t == 0) break;
                t = (t - 1) & s;
            }
            if (std::abs(prob) > 1e-15) acc[s] += prob;
        }
    }

    OutcomeTable table;
    table.n_modes = u.n;
    for (const auto& [pattern, p] : acc) {
        if (!(p > 1e-15)) continue;
        table.patterns.push_back(pattern);
        table.probs.push_back(p);
    }
    return table;
}

double tv_distance(const SampleBatch& batch, const OutcomeTable& table) {
    std::map<std::uint32_t, double> emp;
    for (long s = 0; s < batch.shots; ++s) {
        std::uint32_t mask = 0;
        for (int m = 0; m < batch.n_modes; ++m)
            if (batch.bit(s, m)) mask |= (1u << m);
        emp[mask] += 1.0 / static_cast<double>(batch.shots);
    }
    std::map<std::uint32_t, double> exact;
    for (std::size_t i = 0; i < table.patterns.size(); ++i) exact[table.patterns[i]] = table.probs[i];
    double tv = 0.0;
    for (const auto& [mask, p] : emp) {
        const auto it = exact.find(mask);
        tv += std::abs(p - (it == exact.end() ? 0.0 : it->second));
    }
    for (const auto& [mask, p] : exact)
        if (!emp.count(mask)) tv += p;
    return 0.5 * tv;
}

std::array<std::vector<double>, 2> exact_half_marginals(const UnitaryMatrix& u,
                                                        const std::vector<std::uint8_t>& pattern) {
    if (u.n != 16)
        throw ConfigError("exact_half_marginals: feature map is fixed to N=16, got N=" +
                          std::to_string(u.n));
    SamplerConfig probe;
    probe.input_pattern = pattern;
    probe.shots = 1;
    const std::vector<int> in_modes = photon_modes(probe, u.n);
    const int nph = static_cast<int>(in_modes.size());

    std::array<std::vector<double>, 2> result;
    for (int half = 0; half < 2; ++half) {
        const int lo = half * 8;
        // reach[p][T] = P(photon p lands in half-subset T or outside the half)
        std::vector<std::vector<double>> reach(static_cast<std::size_t>(nph));
        for (int p = 0; p < nph; ++p) {
            double outside = 0.0;
            for (int k = 0; k < 16; ++k)
                if (k < lo || k >= lo + 8) outside += std::norm(u.at(k, in_modes[static_cast<std::size_t>(p)]));
            auto& q = reach[static_cast<std::size_t>(p)];
            q.assign(256, 0.0);
            q[0] = outside;
            for (std::uint32_t t = 1; t < 256; ++t) {
                const std::uint32_t low = t & (~t + 1u);
                const int k = lo + __builtin_ctz(low);
                q[t] = q[t ^ low] + std::norm(u.at(k, in_modes[static_cast<std::size_t>(p)]));
            }
        }
        std::vector<double> hist(256, 0.0);
        for (std::uint32_t s = 0; s < 256; ++s) {
            if (__builtin_popcount(s) > nph) continue;
            double prob = 0.0;
            std::uint32_t t = s;
            while (true) {
                double f = 1.0;
                for (int p = 0; p < nph; ++p) f *= reach[static_cast<std::size_t>(p)][t];
                const int drop = __builtin_popcount(s ^ t);
                prob += (drop % 2 == 0) ? f : -f;
                if (t == 0) break;
                t = (t - 1) & s;
            }
            // mask bit m (mode lo+m) maps to histogram bit with weight 2^(7-m)
            std::uint32_t idx = 0;
            for (int m = 0; m < 8; ++m)
                if (s & (1u << m)) idx |= (1u << (7 - m));
            hist[idx] = std::max(prob, 0.0);
        }
        result[static_cast<std::size_t>(half)] = std::move(hist);
    }
    return result;
}

void write_sample_batch(const SampleBatch& batch, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("write_sample_batch: cannot open " + path);
    const char magic[8] = {'P', 'Q', 'K', 'D', 'S', 'M', 'P', '1'};
    out.write(magic, 8);
    const std::uint32_t s32 = static_cast<std::uint32_t>(batch.shots);
    const std::uint32_t n32 = static_cast<std::uint32_t>(batch.n_modes);
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((s32 >> (8 * i)) & 0xFF);
    out.write(buf, 4);
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((n32 >> (8 * i)) & 0xFF);
    out.write(buf, 4);
    const std::size_t nbits = batch.bits.size();
    std::vector<std::uint8_t> packed((nbits + 7) / 8, 0);
    for (std::size_t i = 0; i < nbits; ++i)
        if (batch.bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
    out.write(reinterpret_cast<const char*>(packed.data()),
              static_cast<std::streamsize>(packed.size()));
}

SampleBatch read_sample_batch(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("read_sample_batch: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "PQKDSMP1", 8) != 0)
        throw FormatError("read_sample_batch: bad magic in " + path);
    char buf[4];
    auto read_u32 = [&](const char* what) {
        in.read(buf, 4);
        if (!in) throw FormatError(std::string("read_sample_batch: truncated ") + what + " in " + path);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
        return v;
    };
    SampleBatch batch;
    batch.shots = read_u32("shot count");
    batch.n_modes = static_cast<int>(read_u32("mode count"));
    const std::size_t nbits = static_cast<std::size_t>(batch.shots) * batch.n_modes;
    std::vector<std::uint8_t> packed((nbits + 7) / 8);
    in.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
    if (!in) throw FormatError("read_sample_batch: truncated payload in " + path);
    batch.bits.assign(nbits, 0);
    for (std::size_t i = 0; i < nbits; ++i)
        batch.bits[i] = (packed[i / 8] >> (7 - i % 8)) & 1u;
    return batch;
}

}  // namespace pqkd
