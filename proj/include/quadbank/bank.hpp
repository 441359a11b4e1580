#pragma once

// Semantic bank of skinned models: K key/value pairs queried by cosine
// similarity, and K base-shape offset fields over a shared template mesh.
// The query weights blend the offset fields into a base shape.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include "quadbank/autodiff.hpp"
#include "quadbank/geometry.hpp"

namespace quadbank::bank {

inline constexpr std::size_t kDefaultBankSize = 60;
inline constexpr std::size_t kKeyDim = 384;
inline constexpr std::size_t kValueDim = 128;
inline constexpr std::size_t kDefaultTopM = 10;

class BankError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Image embedding (key space).
struct ImageEmbedding {
    std::vector<double> values;
};

/// Latent shape embedding (value space).
struct ShapeEmbedding {
    std::vector<double> values;
};

class SemanticBank {
public:
    /// `keys` (K x key_dim) are normalized; `offsets` (K x 3N) are projected
    /// onto mirror-symmetric fields of `templ`. `features` is the canonical
    /// per-vertex feature field of the template (may be empty).
    SemanticBank(ad::Tensor keys, ad::Tensor values, ad::Tensor offsets, geometry::Mesh templ,
                 std::size_t top_m = kDefaultTopM, geometry::VertexField features = {});

    std::size_t size() const { return keys_.dim(0); }
    std::size_t key_dim() const { return keys_.dim(1); }
    std::size_t value_dim() const { return values_.dim(1); }
    std::size_t top_m() const { return top_m_; }
    std::size_t num_vertices() const { return template_.num_vertices(); }

    const ad::Tensor& keys() const { return keys_; }
    const ad::Tensor& values() const { return values_; }
    const ad::Tensor& offsets() const { return offsets_; }
    const geometry::Mesh& templ() const { return template_; }
    const geometry::MirrorMap& mirror() const { return mirror_; }
    const geometry::VertexField& features() const { return features_; }

    /// Replace parameters after an optimizer step; re-establishes the
    /// unit-key and symmetric-offset invariants.
    void set_keys(ad::Tensor keys);
    void set_offsets(ad::Tensor offsets);
    void set_features(geometry::VertexField features);

private:
    ad::Tensor keys_;
    ad::Tensor values_;
    ad::Tensor offsets_;
    geometry::Mesh template_;
    geometry::MirrorMap mirror_;
    std::size_t top_m_;
    geometry::VertexField features_;
};

struct QueryResult {
    std::vector<double> weights;       // K entries, zero outside the selected set
    ShapeEmbedding shape;              // sum_k w_k value_k
    std::vector<double> similarities;  // raw cosine similarity per key
    std::vector<std::size_t> selected; // top_m indices, best first
    bool fallback = false;             // no positive survivor; uniform over selected
};

/// Cosine-similarity query truncated to the top_m keys (ties: lower index),
/// survivors clamped at zero and normalized.
QueryResult query(const SemanticBank& bank, const ImageEmbedding& phi);

/// Query on the arithmetic mean of a batch. Not the mean of per-item
/// queries: the weights are nonlinear in the embedding.
QueryResult batch_mean_embedding(const std::vector<ImageEmbedding>& phis, const SemanticBank& bank);

ShapeEmbedding shape_embedding(const SemanticBank& bank, const std::vector<double>& weights);

/// Template + sum_k w_k offsets_k. Weights must be nonnegative and sum to 1
/// within 1e-9.
geometry::Mesh synthesize_base(const SemanticBank& bank, const std::vector<double>& weights);

/// Differentiable query weights w.r.t. the key matrix (K x key_dim). The
/// top_m selection and the fallback branch are fixed from forward values;
/// keys outside the selection receive zero gradient.
ad::Var query_weights(const ad::Var& keys, const ImageEmbedding& phi, std::size_t top_m);

/// Differentiable base vertices (N x 3) from weights (K) and stacked offsets
/// (K x 3N).
ad::Var base_vertices(const ad::Var& weights, const ad::Var& offsets, const geometry::Mesh& templ);

/// Random bank over `templ`: Gaussian unit keys and values, and smooth
/// symmetric offsets (per-token anisotropic scaling of size `shape_variation`).
SemanticBank random_bank(const geometry::Mesh& templ, std::size_t k, std::uint64_t seed,
                         double shape_variation = 0.0, std::size_t top_m = kDefaultTopM,
                         std::size_t key_dim = kKeyDim, std::size_t value_dim = kValueDim,
                         geometry::VertexField features = {});

/// Random convex weights over `count` randomly chosen tokens.
std::vector<double> random_fusion_weights(std::size_t k, std::size_t count, std::uint64_t seed);

/// Writes `<manifest>` (JSON) plus sibling tensor, template and feature files.
void save_bank(const SemanticBank& bank, const std::filesystem::path& manifest);
SemanticBank load_bank(const std::filesystem::path& manifest);

}  // namespace quadbank::bank
