#include "quadbank/bank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "quadbank/io.hpp"

namespace quadbank::bank {
namespace {

void normalize_rows(ad::Tensor& t) {
    const std::size_t rows = t.dim(0), cols = t.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += t[r * cols + c] * t[r * cols + c];
        s = std::sqrt(s);
        if (s == 0.0) throw BankError("key " + std::to_string(r) + " is zero");
        for (std::size_t c = 0; c < cols; ++c) t[r * cols + c] /= s;
    }
}

double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Indices of the top_m largest similarities; ties go to the lower index.
std::vector<std::size_t> select_top(const std::vector<double>& sims, std::size_t top_m) {
    std::vector<std::size_t> order(sims.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    order.resize(std::min(top_m, order.size()));
    return order;
}

std::vector<double> cosine_similarities(const ad::Tensor& keys, const ImageEmbedding& phi) {
    const std::size_t k = keys.dim(0), d = keys.dim(1);
    if (phi.values.size() != d) {
        throw BankError("embedding has dim " + std::to_string(phi.values.size()) + ", keys have " + std::to_string(d));
    }
    const double pn = norm(phi.values);
    if (!(pn > 0) || !std::isfinite(pn)) throw BankError("query embedding must be finite and nonzero");
    std::vector<double> sims(k);
    for (std::size_t r = 0; r < k; ++r) {
        double dotp = 0, kn = 0;
        for (std::size_t c = 0; c < d; ++c) {
            dotp += keys[r * d + c] * phi.values[c];
            kn += keys[r * d + c] * keys[r * d + c];
        }
        sims[r] = dotp / (pn * std::sqrt(kn));
    }
    return sims;
}

}  // namespace

SemanticBank::SemanticBank(ad::Tensor keys, ad::Tensor values, ad::Tensor offsets, geometry::Mesh templ,
                           std::size_t top_m, geometry::VertexField features)
    : values_(std::move(values)), template_(std::move(templ)), top_m_(top_m) {
    if (keys.shape.size() != 2 || keys.dim(0) == 0) throw BankError("keys must be a nonempty K x D matrix");
    const std::size_t k = keys.dim(0);
    if (values_.shape.size() != 2 || values_.dim(0) != k) throw BankError("values must be K x D_val");
    if (top_m_ == 0 || top_m_ > k) {
        throw BankError("top_m " + std::to_string(top_m_) + " must lie in [1, " + std::to_string(k) + "]");
    }
    template_.validate();
    mirror_ = geometry::mirror_pairs(template_);
    set_keys(std::move(keys));
    set_offsets(std::move(offsets));
    set_features(std::move(features));
}

void SemanticBank::set_keys(ad::Tensor keys) {
    if (!keys_.data.empty() && keys.shape != keys_.shape) throw BankError("key matrix shape changed");
    normalize_rows(keys);
    keys_ = std::move(keys);
}

void SemanticBank::set_offsets(ad::Tensor offsets) {
    const std::size_t n3 = 3 * template_.num_vertices();
    if (offsets.shape.size() != 2 || offsets.dim(0) != keys_.dim(0) || offsets.dim(1) != n3) {
        throw BankError("offsets must be K x " + std::to_string(n3) + ", got " + ad::shape_str(offsets.shape));
    }
    for (double v : offsets.data)
        if (!std::isfinite(v)) throw BankError("non-finite offset");
    geometry::symmetrize_in_place(offsets.data, mirror_);
    offsets_ = std::move(offsets);
}

void SemanticBank::set_features(geometry::VertexField features) {
    if (!features.data.empty() && features.num_vertices() != template_.num_vertices()) {
        throw BankError("feature field does not match the template vertex count");
    }
    features_ = std::move(features);
}

ShapeEmbedding shape_embedding(const SemanticBank& bank, const std::vector<double>& weights) {
    const std::size_t dv = bank.value_dim();
    ShapeEmbedding e{std::vector<double>(dv, 0.0)};
    for (std::size_t k = 0; k < bank.size(); ++k) {
        if (weights[k] == 0.0) continue;
        for (std::size_t c = 0; c < dv; ++c) e.values[c] += weights[k] * bank.values()[k * dv + c];
    }
    return e;
}

QueryResult query(const SemanticBank& bank, const ImageEmbedding& phi) {
    QueryResult r;
    r.similarities = cosine_similarities(bank.keys(), phi);
    r.selected = select_top(r.similarities, bank.top_m());
    r.weights.assign(bank.size(), 0.0);
    double total = 0;
    for (std::size_t k : r.selected) total += std::max(0.0, r.similarities[k]);
    if (total > 0) {
        for (std::size_t k : r.selected) r.weights[k] = std::max(0.0, r.similarities[k]) / total;
    } else {
        r.fallback = true;
        for (std::size_t k : r.selected) r.weights[k] = 1.0 / static_cast<double>(r.selected.size());
    }
    r.shape = shape_embedding(bank, r.weights);
    return r;
}

QueryResult batch_mean_embedding(const std::vector<ImageEmbedding>& phis, const SemanticBank& bank) {
    if (phis.empty()) throw BankError("batch_mean_embedding of an empty batch");
    ImageEmbedding mean{std::vector<double>(phis.front().values.size(), 0.0)};
    for (const ImageEmbedding& p : phis) {
        if (p.values.size() != mean.values.size()) throw BankError("batch embeddings differ in dimension");
        for (std::size_t c = 0; c < p.values.size(); ++c) mean.values[c] += p.values[c];
    }
    for (double& v : mean.values) v /= static_cast<double>(phis.size());
    return query(bank, mean);
}

geometry::Mesh synthesize_base(const SemanticBank& bank, const std::vector<double>& weights) {
    if (weights.size() != bank.size()) throw BankError("expected " + std::to_string(bank.size()) + " weights");
    double total = 0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw BankError("weights must be nonnegative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw BankError("weights sum to " + std::to_string(total) + ", expected 1");
    geometry::Mesh out = bank.templ();
    const std::size_t n3 = 3 * out.num_vertices();
    for (std::size_t k = 0; k < bank.size(); ++k) {
        if (weights[k] == 0.0) continue;
        const double* off = bank.offsets().data.data() + k * n3;
        for (std::size_t i = 0; i < out.num_vertices(); ++i)
            for (int c = 0; c < 3; ++c) out.vertices[i][c] += weights[k] * off[3 * i + c];
    }
    return out;
}

ad::Var query_weights(const ad::Var& keys, const ImageEmbedding& phi, std::size_t top_m) {
    ad::Tape& t = *keys.tape();
    const ad::Tensor& kv = keys.value();
    const std::size_t k = kv.dim(0), d = kv.dim(1);
    const std::vector<double> sims = cosine_similarities(kv, phi);
    const std::vector<std::size_t> selected = select_top(sims, top_m);

    double total = 0;
    for (std::size_t s : selected) total += std::max(0.0, sims[s]);
    if (!(total > 0)) {
        ad::Tensor uniform({k}, 0.0);
        for (std::size_t s : selected) uniform[s] = 1.0 / static_cast<double>(selected.size());
        return t.constant(std::move(uniform));
    }

    const double pn = norm(phi.values);
    ad::Tensor unit_phi({d, 1});
    for (std::size_t c = 0; c < d; ++c) unit_phi[c] = phi.values[c] / pn;
    ad::Tensor mask({k, 1}, 0.0);
    for (std::size_t s : selected) mask[s] = 1.0;

    const ad::Var key_norms = ad::sqrt(ad::sum_cols(ad::square(keys)));
    const ad::Var cos = ad::div(ad::matmul(keys, t.constant(unit_phi)), key_norms);
    const ad::Var kept = ad::mul_const(ad::relu(cos), mask);
    const ad::Var inv_total = ad::div(t.constant(1.0), ad::sum(kept));
    return ad::reshape(ad::scale(kept, inv_total), {k});
}

ad::Var base_vertices(const ad::Var& weights, const ad::Var& offsets, const geometry::Mesh& templ) {
    const std::size_t k = weights.size();
    const std::size_t n = templ.num_vertices();
    const ad::Var blended = ad::matmul(ad::reshape(weights, {1, k}), offsets);
    return ad::reshape(ad::add_const(blended, ad::Tensor({1, 3 * n}, templ.vertex_tensor().data)), {n, 3});
}

SemanticBank random_bank(const geometry::Mesh& templ, std::size_t k, std::uint64_t seed, double shape_variation,
                         std::size_t top_m, std::size_t key_dim, std::size_t value_dim,
                         geometry::VertexField features) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ad::Tensor keys({k, key_dim});
    for (double& v : keys.data) v = gauss(rng);
    ad::Tensor values({k, value_dim});
    for (double& v : values.data) v = gauss(rng) / std::sqrt(static_cast<double>(value_dim));
    const std::size_t n = templ.num_vertices();
    ad::Tensor offsets({k, 3 * n}, 0.0);
    if (shape_variation > 0) {
        for (std::size_t r = 0; r < k; ++r) {
            double s[3];
            for (double& si : s) si = shape_variation * gauss(rng);
            for (std::size_t i = 0; i < n; ++i)
                for (int c = 0; c < 3; ++c) offsets[r * 3 * n + 3 * i + c] = s[c] * templ.vertices[i][c];
        }
    }
    return SemanticBank(std::move(keys), std::move(values), std::move(offsets), templ, top_m, std::move(features));
}

std::vector<double> random_fusion_weights(std::size_t k, std::size_t count, std::uint64_t seed) {
    if (count == 0 || count > k) throw BankError("fusion count must lie in [1, K]");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::exponential_distribution<double> expo(1.0);
    std::vector<double> w(k, 0.0);
    double total = 0;
    for (std::size_t i = 0; i < count; ++i) total += (w[idx[i]] = expo(rng));
    for (double& v : w) v /= total;
    return w;
}

void save_bank(const SemanticBank& bank, const std::filesystem::path& manifest) {
    const std::filesystem::path dir = manifest.parent_path();
    const std::string stem = manifest.stem().string();
    const std::string tensor_name = stem + ".fts";
    const std::string template_name = stem + "_template.obj";

    const std::size_t k = bank.size(), dk = bank.key_dim(), dv = bank.value_dim(), n3 = 3 * bank.num_vertices();
    ad::Tensor packed({k, dk + dv + n3});
    for (std::size_t r = 0; r < k; ++r) {
        double* row = packed.data.data() + r * (dk + dv + n3);
        std::copy_n(bank.keys().data.data() + r * dk, dk, row);
        std::copy_n(bank.values().data.data() + r * dv, dv, row + dk);
        std::copy_n(bank.offsets().data.data() + r * n3, n3, row + dk + dv);
    }
    io::save_fts(packed, dir / tensor_name);
    geometry::save_obj(bank.templ(), dir / template_name);

    nlohmann::json j;
    j["K"] = k;
    j["dims"] = {{"key", dk}, {"value", dv}, {"vertices", bank.num_vertices()}};
    j["top_m"] = bank.top_m();
    j["template"] = template_name;
    j["tensor"] = tensor_name;
    if (!bank.features().data.empty()) {
        const std::string feat_name = stem + "_features.fts";
        io::save_fts(bank.features().tensor(), dir / feat_name);
        j["features"] = feat_name;
    }
    std::ofstream out(manifest);
    if (!out) throw BankError("cannot write " + manifest.string());
    out << j.dump(2) << '\n';
}

SemanticBank load_bank(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw BankError("cannot open " + manifest.string());
    const nlohmann::json j = nlohmann::json::parse(in);
    const std::filesystem::path dir = manifest.parent_path();
    const std::size_t k = j.at("K"), dk = j.at("dims").at("key"), dv = j.at("dims").at("value");
    geometry::Mesh templ = geometry::load_obj(dir / j.at("template").get<std::string>());
    const std::size_t n3 = 3 * templ.num_vertices();
    const ad::Tensor packed = io::load_fts(dir / j.at("tensor").get<std::string>());
    if (packed.shape != ad::Shape{k, dk + dv + n3}) {
        throw BankError("bank tensor shape " + ad::shape_str(packed.shape) + " disagrees with manifest");
    }
    ad::Tensor keys({k, dk}), values({k, dv}), offsets({k, n3});
    for (std::size_t r = 0; r < k; ++r) {
        const double* row = packed.data.data() + r * (dk + dv + n3);
        std::copy_n(row, dk, keys.data.data() + r * dk);
        std::copy_n(row + dk, dv, values.data.data() + r * dv);
        std::copy_n(row + dk + dv, n3, offsets.data.data() + r * n3);
    }
    geometry::VertexField features;
    if (j.contains("features")) {
        features = geometry::VertexField::from_tensor(io::load_fts(dir / j.at("features").get<std::string>()));
    }
    return SemanticBank(std::move(keys), std::move(values), std::move(offsets), std::move(templ),
                        j.at("top_m").get<std::size_t>(), std::move(features));
}

}  // namespace quadbank::bank
