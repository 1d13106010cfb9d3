// SPDX-License-Identifier: Apache-2.0
#include "epl/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <vector>

#include <fmt/format.h>

namespace epl {
namespace {

float sign_of(float v)
{
    return static_cast<float>((v > 0.0f) - (v < 0.0f));
}

struct Position {
    Tensor* tensor;
    std::size_t index;
};

void permute_group(std::vector<Position>& group, Rng rng)
{
    if (group.size() < 2) return;
    std::vector<float> values;
    values.reserve(group.size());
    for (const auto& p : group) values.push_back((*p.tensor)[p.index]);
    for (std::size_t i = values.size(); i > 1; --i) std::swap(values[i - 1], values[rng.below(i)]);
    for (std::size_t i = 0; i < group.size(); ++i) (*group[i].tensor)[group[i].index] = values[i];
}

void permute(std::vector<Position>& group, bool sign_preserving, const Rng& rng, const std::string& tag)
{
    if (!sign_preserving) {
        permute_group(group, rng.substream(tag));
        return;
    }
    std::vector<Position> positive, negative;
    for (const auto& p : group) (std::signbit((*p.tensor)[p.index]) ? negative : positive).push_back(p);
    permute_group(positive, rng.substream(tag + "/+"));
    permute_group(negative, rng.substream(tag + "/-"));
}

const char* source_name(Source s)
{
    switch (s) {
    case Source::init: return "init";
    case Source::rewind: return "rewind";
    case Source::reinit: return "reinit";
    }
    return "?";
}

const char* scope_name(Scope s)
{
    switch (s) {
    case Scope::global: return "global";
    case Scope::layer: return "layer";
    case Scope::filter: return "filter";
    }
    return "?";
}

Source parse_source(const std::string& v)
{
    if (v == "init" || v == "0") return Source::init;
    if (v == "rewind" || v == "k") return Source::rewind;
    if (v == "reinit") return Source::reinit;
    throw Error("perturbation: unknown source '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error("perturbation: " + key + " expects true/false, got '" + v + "'");
}

}  // namespace

WeightSnapshot recombine(const WeightSnapshot& sign_src, const WeightSnapshot& mag_src, const Mask& mask)
{
    require_congruent(sign_src.params, mag_src.params, "recombine");
    require_congruent(mag_src.params, mask, "recombine");
    WeightSnapshot out = mag_src;
    for (const auto& [id, e] : mask.entries) {
        const Tensor& s = sign_src.params.at(id);
        const Tensor& m = mag_src.params.at(id);
        Tensor& o = out.params.at(id);
        for (std::size_t i = 0; i < o.numel(); ++i) {
            o[i] = e.keep[i] ? sign_of(s[i]) * std::fabs(m[i]) : 0.0f;
        }
    }
    return out;
}

WeightSnapshot shuffle(const WeightSnapshot& snap, const Mask& mask, const StructuralIndex& index, Scope scope,
                       bool sign_preserving, const Rng& rng)
{
    require_congruent(snap.params, mask, "shuffle");
    WeightSnapshot out = snap;
    auto surviving = [&](const std::string& id, IndexRange range, std::vector<Position>& group) {
        Tensor* t = &out.params.at(id);
        const auto& keep = mask.entries.at(id).keep;
        for (std::size_t i = range.begin; i < range.end; ++i)
            if (keep[i]) group.push_back({t, i});
    };

    if (scope == Scope::global) {
        std::vector<Position> group;
        for (const auto& [id, e] : mask.entries) surviving(id, {0, e.keep.size()}, group);
        permute(group, sign_preserving, rng, "global");
        return out;
    }
    for (const auto& [id, e] : mask.entries) {
        const ParamScopes* scopes = nullptr;
        if (auto it = index.find(id); it != index.end()) scopes = &it->second;
        if (scope == Scope::filter && scopes && !scopes->filters.empty()) {
            for (std::size_t f = 0; f < scopes->filters.size(); ++f) {
                std::vector<Position> group;
                surviving(id, scopes->filters[f], group);
                permute(group, sign_preserving, rng, id + "/filter/" + std::to_string(f));
            }
        } else {
            std::vector<Position> group;
            surviving(id, {0, e.keep.size()}, group);
            permute(group, sign_preserving, rng, id + "/layer");
        }
    }
    return out;
}

WeightSnapshot add_noise(const WeightSnapshot& snap, const Mask& mask, const Model& model, double n, const Rng& rng)
{
    if (!(n >= 0.0)) throw Error("add_noise: noise multiple must be >= 0");
    require_congruent(snap.params, mask, "add_noise");
    WeightSnapshot out = snap;
    if (n == 0.0) return out;
    for (const auto& [id, e] : mask.entries) {
        const double sigma = n * static_cast<double>(model.meta.at(id).init_sigma);
        Rng r = rng.substream("noise/" + id);
        Tensor& t = out.params.at(id);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (e.keep[i]) t[i] = static_cast<float>(t[i] + sigma * r.normal());
        }
    }
    return out;
}

EffectiveStats effective_std(const WeightSnapshot& perturbed, const WeightSnapshot& orig, const Mask& mask)
{
    require_congruent(perturbed.params, orig.params, "effective_std");
    require_congruent(orig.params, mask, "effective_std");
    std::vector<double> diff;
    for (const auto& [id, e] : mask.entries) {
        const Tensor& a = perturbed.params.at(id);
        const Tensor& b = orig.params.at(id);
        for (std::size_t i = 0; i < a.numel(); ++i)
            if (e.keep[i]) diff.push_back(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    }
    if (diff.empty()) throw Error("effective_std: no surviving weights");
    double mean = 0.0;
    for (double d : diff) mean += d;
    mean /= static_cast<double>(diff.size());
    double sq = 0.0;
    for (double d : diff) sq += (d - mean) * (d - mean);
    return {mean, std::sqrt(sq / static_cast<double>(diff.size()))};
}

double incomplete_beta(double a, double b, double x, double y)
{
    if (!(a > 0.0 && b > 0.0)) throw Error("incomplete_beta: shape parameters must be positive");
    if (x <= 0.0) return 0.0;
    if (y <= 0.0) return 1.0;

    // Continued fraction (modified Lentz); converges fast for x < (a+1)/(a+b+2).
    auto continued_fraction = [](double a, double b, double x) {
        constexpr double kTiny = 1e-300;
        constexpr double kEps = 1e-16;
        double c = 1.0;
        double d = 1.0 - (a + b) * x / (a + 1.0);
        if (std::fabs(d) < kTiny) d = kTiny;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= 10000; ++m) {
            const double m2 = 2.0 * m;
            double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
            d = 1.0 + num * d;
            if (std::fabs(d) < kTiny) d = kTiny;
            c = 1.0 + num / c;
            if (std::fabs(c) < kTiny) c = kTiny;
            d = 1.0 / d;
            h *= d * c;
            num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
            d = 1.0 + num * d;
            if (std::fabs(d) < kTiny) d = kTiny;
            c = 1.0 + num / c;
            if (std::fabs(c) < kTiny) c = kTiny;
            d = 1.0 / d;
            const double delta = d * c;
            h *= delta;
            if (std::fabs(delta - 1.0) < kEps) return h;
        }
        throw Error("incomplete_beta: continued fraction did not converge");
    };

    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log(y);
    if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_front) * continued_fraction(a, b, x) / a;
    return 1.0 - std::exp(log_front) * continued_fraction(b, a, y) / b;
}

Correlation pearson(std::span<const double> xs, std::span<const double> ys)
{
    if (xs.size() != ys.size()) throw Error("pearson: length mismatch");
    const std::size_t n = xs.size();
    if (n < 3) throw Error("pearson: need at least 3 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx, dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error("pearson: zero variance");
    const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double df = static_cast<double>(n - 2);
    // With t = r sqrt(df / (1 - r^2)), df / (df + t^2) reduces to 1 - r^2.
    const double x = (1.0 - r) * (1.0 + r);
    const double p = x == 0.0 ? 0.0 : incomplete_beta(df / 2.0, 0.5, x, r * r);
    return {r, p};
}

std::string PerturbationSpec::variant_name() const
{
    switch (variant) {
    case Variant::none: return "none";
    case Variant::recombine: return "recombine";
    case Variant::shuffle: return "shuffle";
    case Variant::noise: return "noise";
    }
    return "?";
}

std::string PerturbationSpec::params() const
{
    switch (variant) {
    case Variant::none: return "";
    case Variant::recombine:
        return fmt::format("sign={};mag={}", source_name(sign_source), source_name(magnitude_source));
    case Variant::shuffle:
        return fmt::format("scope={};sign_preserving={};sign_override={}", scope_name(scope),
                           sign_preserving ? "true" : "false", sign_override == SignOverride::init ? "init" : "none");
    case Variant::noise: return fmt::format("n={}", noise_multiple);
    }
    return "";
}

std::string to_string(const PerturbationSpec& spec)
{
    const auto p = spec.params();
    return p.empty() ? spec.variant_name() : spec.variant_name() + ":" + p;
}

PerturbationSpec parse_perturbation(const std::string& text)
{
    PerturbationSpec spec;
    const auto colon = text.find(':');
    const std::string name = text.substr(0, colon);
    std::map<std::string, std::string> kv;
    if (colon != std::string::npos) {
        std::stringstream ss(text.substr(colon + 1));
        std::string item;
        while (std::getline(ss, item, ';')) {
            if (item.empty()) continue;
            const auto eq = item.find('=');
            if (eq == std::string::npos) throw Error("perturbation: expected key=value in '" + item + "'");
            kv[item.substr(0, eq)] = item.substr(eq + 1);
        }
    }
    auto take = [&](const std::string& key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        auto v = it->second;
        kv.erase(it);
        return v;
    };

    if (name == "none") {
        spec.variant = Variant::none;
    } else if (name == "recombine") {
        spec.variant = Variant::recombine;
        if (auto v = take("sign")) spec.sign_source = parse_source(*v);
        if (auto v = take("mag")) spec.magnitude_source = parse_source(*v);
    } else if (name == "shuffle") {
        spec.variant = Variant::shuffle;
        if (auto v = take("scope")) {
            if (*v == "global") spec.scope = Scope::global;
            else if (*v == "layer") spec.scope = Scope::layer;
            else if (*v == "filter") spec.scope = Scope::filter;
            else throw Error("perturbation: unknown scope '" + *v + "'");
        }
        if (auto v = take("sign_preserving")) spec.sign_preserving = parse_bool("sign_preserving", *v);
        if (auto v = take("sign_override")) {
            if (*v == "init") spec.sign_override = SignOverride::init;
            else if (*v != "none") throw Error("perturbation: unknown sign_override '" + *v + "'");
        }
    } else if (name == "noise") {
        spec.variant = Variant::noise;
        auto v = take("n");
        if (!v) throw Error("perturbation: noise requires n");
        std::size_t used = 0;
        try {
            spec.noise_multiple = std::stod(*v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != v->size()) throw Error("perturbation: noise n expects a number, got '" + *v + "'");
        if (!(spec.noise_multiple >= 0.0)) throw Error("perturbation: noise multiple must be >= 0");
    } else {
        throw Error("perturbation: unknown variant '" + name + "'");
    }
    if (!kv.empty()) throw Error("perturbation: unknown parameter '" + kv.begin()->first + "' for " + name);
    return spec;
}

WeightSnapshot apply_perturbation(const PerturbationSpec& spec, const PerturbContext& ctx)
{
    if (!ctx.model) throw Error("apply_perturbation: context has no model");
    const Rng rng = Rng(spec.seed).substream("perturb");
    auto resolve = [&](Source s) {
        switch (s) {
        case Source::init: return ctx.init;
        case Source::rewind: return ctx.rewind;
        case Source::reinit: {
            WeightSnapshot w;
            w.params = build_model(ctx.model->spec, rng.substream("reinit")).params;
            apply_mask(w.params, ctx.mask);
            return w;
        }
        }
        return ctx.rewind;
    };

    WeightSnapshot out;
    switch (spec.variant) {
    case Variant::none: out = ctx.rewind; break;
    case Variant::recombine:
        out = recombine(resolve(spec.sign_source), resolve(spec.magnitude_source), ctx.mask);
        break;
    case Variant::shuffle:
        out = shuffle(ctx.rewind, ctx.mask, ctx.index, spec.scope, spec.sign_preserving, rng);
        if (spec.sign_override == SignOverride::init) out = recombine(ctx.init, out, ctx.mask);
        break;
    case Variant::noise: out = add_noise(ctx.rewind, ctx.mask, *ctx.model, spec.noise_multiple, rng); break;
    }
    out.iteration = ctx.rewind.iteration;
    out.run_id = ctx.rewind.run_id;
    return out;
}

}  // namespace epl
