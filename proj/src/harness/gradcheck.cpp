#include <random>

#include "quadbank/harness.hpp"
#include "quadbank/objective.hpp"

namespace quadbank::harness {
namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;

constexpr std::size_t kSuiteResolution = 32;
constexpr double kSuiteSigma = 1e-3;
// Leaky units bend by a factor of five; a crossing inside the stencil shows
// up as a small slope mismatch once averaged over the whole network.
constexpr double kLeakyKinkTolerance = 2e-4;

Tensor matrix_tensor(const Eigen::Matrix3d& m) {
    Tensor t({3, 3});
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) t[3 * r + c] = m(r, c);
    return t;
}

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.data) v = u(rng);
    return t;
}

struct Suite {
    render::Camera cam;
    SynthScene scene;
    View target;
    objective::DistanceField dt;
    Tensor rot, trans, angles, vertices, albedo, features, light_dir;
};

Suite make_suite(std::uint64_t seed) {
    Suite s;
    s.cam.width = s.cam.height = kSuiteResolution;
    SynthSpec spec;
    spec.coarse = true;
    spec.leg_bend_deg = 15;
    spec.elevation_deg = 10;
    spec.azimuths = {35};
    s.scene = synth_quadruped(spec);
    const ViewSet vs = generate_views(s.scene, spec, s.cam, 1);
    s.target = vs.views[0];
    s.dt = objective::distance_transform(s.target.mask, s.cam.width, s.cam.height);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> jitter(0.0, 0.03);
    s.vertices = s.scene.mesh.vertex_tensor();
    for (double& v : s.vertices.data) v += jitter(rng);
    s.rot = matrix_tensor(view_rotation(38, 8));
    s.trans = Tensor({3}, std::vector<double>{0.02, -0.03, 0.05});
    s.angles = random_tensor({s.scene.skeleton.size(), 3}, rng, -0.2, 0.2);
    s.albedo = random_tensor({s.scene.mesh.num_vertices(), 3}, rng, 0.1, 0.9);
    const VertexField feats = reduced_features(s.scene.raw_features, vs.pca);
    s.features = feats.tensor();
    for (double& v : s.features.data) v += jitter(rng);
    s.light_dir = Tensor({1, 3}, std::vector<double>{0.2, 0.4, 0.9});
    return s;
}

// Vertices posed through skinning and the rigid transform.
Var posed(const Suite& s, const Var& vertices, const Var& rot, const Var& trans, const Var& angles) {
    return skeleton::lbs(vertices, s.scene.skeleton, s.scene.weights, rot, trans, skeleton::euler_rotations(angles));
}

// Visibility at the unperturbed parameters. Hard rasterization is piecewise
// constant, so the checked functions interpolate through fixed fragments.
render::Fragments base_fragments(const Suite& s) {
    Tape tape;
    const Var v = posed(s, tape.constant(s.vertices), tape.constant(s.rot), tape.constant(s.trans),
                        tape.constant(s.angles));
    const auto& p = render::project(s.cam, v).value();
    std::vector<render::Projection> plain(p.dim(0));
    for (std::size_t i = 0; i < plain.size(); ++i) plain[i] = {p[3 * i], p[3 * i + 1], p[3 * i + 2], p[3 * i + 2] > 0};
    return render::rasterize_fragments(plain, s.scene.mesh.faces, s.cam.width, s.cam.height, 1);
}

Var coverage(Tape& tape, const render::Fragments& frags) {
    Tensor c({frags.face.size()});
    for (std::size_t p = 0; p < c.size(); ++p) c[p] = frags.covered(p) ? 1.0 : 0.0;
    return tape.constant(std::move(c));
}

}  // namespace

std::vector<GradientTerm> gradient_suite(std::uint64_t seed, std::size_t max_coords) {
    const Suite s = make_suite(seed);
    const auto& faces = s.scene.mesh.faces;
    const Tensor tmask({s.cam.pixels()}, s.target.mask);
    const Tensor timage({s.cam.pixels(), 3}, s.target.image);
    const Tensor tfeat({s.cam.pixels(), kFeatureDim}, s.target.features);
    const render::Fragments frags = base_fragments(s);
    std::mt19937_64 rng(seed ^ 0x9e3779b9);
    ad::FiniteDiffOptions opt;
    opt.max_coords = max_coords;
    opt.seed = seed;

    std::vector<GradientTerm> out;
    auto run = [&](const char* name, const ad::ScalarFn& f, std::vector<Tensor> params, double kink_tolerance = 1e-2) {
        ad::FiniteDiffOptions o = opt;
        o.kink_tolerance = kink_tolerance;
        out.push_back({name, ad::finite_diff_check(f, std::move(params), o)});
    };

    run("mask",
        [&](Tape&, const std::vector<Var>& p) {
            const Var proj = render::project(s.cam, posed(s, p[0], p[1], p[2], p[3]));
            return objective::mask_loss(render::soft_silhouette(proj, faces, s.cam, kSuiteSigma), tmask, s.dt.distance, 0.1);
        },
        {s.vertices, s.rot, s.trans, s.angles});

    run("image",
        [&](Tape& tape, const std::vector<Var>& p) {
            const Var v = posed(s, p[0], p[1], p[2], p[3]);
            const Var proj = render::project(s.cam, v);
            const Var n = ad::normalize_rows(render::interpolate(frags, proj, geometry::vertex_normals(v, faces), faces));
            const Var a = render::interpolate(frags, proj, p[4], faces);
            const Var img = render::shade_lambertian(n, a, tape.constant(0.4), tape.constant(0.6),
                                                     ad::reshape(ad::normalize_rows(p[5]), {3}));
            return objective::image_loss(img, timage, coverage(tape, frags), tmask);
        },
        {s.vertices, s.rot, s.trans, s.angles, s.albedo, s.light_dir});

    run("feature",
        [&](Tape& tape, const std::vector<Var>& p) {
            const Var proj = render::project(s.cam, posed(s, p[0], p[1], p[2], p[3]));
            return objective::feature_loss(render::interpolate(frags, proj, p[4], faces), tfeat, coverage(tape, frags), tmask);
        },
        {s.vertices, s.rot, s.trans, s.angles, s.features});

    const objective::Discriminator disc = objective::Discriminator::random(seed);
    std::vector<double> embedding(disc.embed_dim);
    for (double& e : embedding) e = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
    run("adversarial",
        [&](Tape& tape, const std::vector<Var>& p) {
            const Var proj = render::project(s.cam, posed(s, p[0], p[1], p[2], p[3]));
            const Var mask = render::soft_silhouette(proj, faces, s.cam, kSuiteSigma);
            const Var logit = objective::discriminator_logit(objective::bind(tape, disc, false), mask, embedding);
            return objective::generator_loss(std::span<const Var>(&logit, 1));
        },
        {s.vertices, s.rot, s.trans, s.angles}, kLeakyKinkTolerance);

    run("hypothesis",
        [&](Tape& tape, const std::vector<Var>& p) {
            const Var v = posed(s, tape.constant(s.vertices), tape.constant(s.rot), tape.constant(s.trans),
                                tape.constant(s.angles));
            const Var rec = objective::mask_loss(
                render::soft_silhouette(render::project(s.cam, v), faces, s.cam, kSuiteSigma), tmask, s.dt.distance, 0.1);
            return objective::hyp_loss(ad::exp(p[0]), rec);
        },
        {Tensor::scalar(-2.5)});

    const Tensor offsets = random_tensor({s.scene.mesh.num_vertices(), 3}, rng, -0.05, 0.05);
    run("deformation",
        [&](Tape&, const std::vector<Var>& p) { return objective::def_regularizer(p[0]); }, {offsets});

    run("articulation",
        [&](Tape&, const std::vector<Var>& p) { return skeleton::art_regularizer(p[0]); }, {s.angles});

    const Tensor pixel_probe = random_tensor({s.cam.pixels()}, rng, 0.0, 1.0);
    run("soft_silhouette",
        [&](Tape&, const std::vector<Var>& p) {
            const Var proj = render::project(s.cam, skeleton::rigid_transform(p[0], p[1], p[2]));
            return ad::sum(ad::mul_const(render::soft_silhouette(proj, faces, s.cam, kSuiteSigma), pixel_probe));
        },
        {s.vertices, s.rot, s.trans});

    const std::size_t np = 64;
    Tensor normals = random_tensor({np, 3}, rng, -1.0, 1.0);
    const Tensor shade_probe = random_tensor({np, 3}, rng, 0.0, 1.0);
    run("shading",
        [&](Tape&, const std::vector<Var>& p) {
            const Var img = render::shade_lambertian(ad::normalize_rows(p[0]), p[1], p[2], p[3],
                                                     ad::reshape(ad::normalize_rows(p[4]), {3}));
            return ad::sum(ad::mul_const(img, shade_probe));
        },
        {normals, random_tensor({np, 3}, rng, 0.1, 0.9), Tensor::scalar(0.3), Tensor::scalar(0.7), s.light_dir});

    const Tensor vertex_probe = random_tensor({s.scene.mesh.num_vertices(), 3}, rng, -1.0, 1.0);
    run("lbs",
        [&](Tape&, const std::vector<Var>& p) {
            return ad::sum(ad::mul_const(posed(s, p[0], p[1], p[2], p[3]), vertex_probe));
        },
        {s.vertices, s.rot, s.trans, s.angles});
    return out;
}

}  // namespace quadbank::harness
