#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "acceptance.hpp"
#include "quadbank/fit.hpp"
#include "quadbank/harness.hpp"

namespace fs = std::filesystem;
using namespace quadbank;

namespace {

nlohmann::json read_config(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    return nlohmann::json::parse(in);
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

render::Camera square_camera(std::size_t px) {
    render::Camera c;
    c.width = c.height = px;
    return c;
}

struct Common {
    std::uint64_t seed = 1;
    std::string out;
    unsigned jobs = 1;
    std::string config;
};

void add_common(CLI::App* app, Common& c, bool needs_out) {
    app->add_option("--seed", c.seed, "Random seed");
    auto* o = app->add_option("--out", c.out, "Output path");
    if (needs_out) o->required();
    app->add_option("--jobs", c.jobs, "Worker threads (0 = all cores)");
    app->add_option("--config", c.config, "JSON config file");
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, std::size_t size) {
    nlohmann::json j = read_config(c.config);
    harness::SynthSpec spec = harness::synth_spec_from_json(j);
    if (!j.contains("seed")) spec.seed = c.seed;
    const auto cam = square_camera(size);
    const auto scene = harness::synth_quadruped(spec);
    const auto views = harness::generate_views(scene, spec, cam, c.jobs);
    harness::save_dataset(views, cam, c.out, &scene);
    std::printf("%zu views, %zu vertices -> %s\n", views.views.size(), scene.mesh.num_vertices(), c.out.c_str());
    return 0;
}

int cmd_fit(const Common& c, const std::string& targets, const std::string& bank_path) {
    const auto data = harness::load_dataset(targets);
    const auto bk = bank::load_bank(bank_path);
    nlohmann::json j = read_config(c.config);
    fit::FitConfig config = fit::fit_config_from_json(j);
    if (!j.contains("seed")) config.seed = c.seed;
    config.camera = data.camera;
    config.jobs = c.jobs;
    std::vector<fit::Target> t;
    for (const auto& v : data.views.views) t.push_back(harness::make_target(v, bk.key_dim()));
    const auto r = fit::fit_instance(t, bk, config);
    fit::save_fit_result(r, config, c.out);
    for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    for (std::size_t v = 0; v < r.views.size(); ++v) {
        const auto& vr = r.views[v];
        if (vr.skipped) {
            std::printf("view %zu skipped\n", v);
            continue;
        }
        std::printf("view %zu azimuth %.1f mask loss %.2e iou %.3f\n", v, vr.azimuths_deg[vr.hypothesis], vr.mask_loss,
                    harness::eval_iou(fit::render_mask(r, v, data.camera), data.views.views[v].mask));
    }
    return 0;
}

int cmd_render(const Common& c, const std::string& mesh_path, double azimuth, double elevation, std::size_t size) {
    const auto mesh = geometry::load_obj(mesh_path);
    geometry::Mesh posed = mesh;
    const Eigen::Matrix3d r = harness::view_rotation(azimuth, elevation);
    for (auto& v : posed.vertices) v = r * v;
    const auto cam = square_camera(size);
    const auto normals = geometry::compute_normals(posed).normals;
    const auto buf = render::rasterize(posed, {normals}, cam, c.jobs);
    const std::vector<double> albedo(cam.pixels() * 3, 0.8);
    const auto shaded = render::shade_lambertian(buf.attributes[0], albedo, buf.mask, render::Light{});
    fs::create_directories(c.out);
    render::save_mask_png(buf.mask, cam.width, cam.height, fs::path(c.out) / "mask.png");
    render::save_rgb_png(shaded, cam.width, cam.height, fs::path(c.out) / "shaded.png");
    std::printf("wrote %s/mask.png and shaded.png\n", c.out.c_str());
    return 0;
}

int cmd_eval(const Common& c, const std::string& targets, const std::string& fit_dir, std::size_t pairs) {
    const auto data = harness::load_dataset(targets);
    const auto& views = data.views.views;
    std::vector<harness::Reconstruction> recon;
    std::vector<harness::KeypointSet> kps;
    double iou = 0;
    for (std::size_t v = 0; v < views.size(); ++v) {
        const fs::path p = fs::path(fit_dir) / ("deformed_" + std::to_string(v) + ".obj");
        if (!fs::exists(p)) continue;
        const auto mesh = geometry::load_obj(p);
        iou += harness::eval_iou(render::rasterize(mesh, {}, data.camera, c.jobs).mask, views[v].mask);
        recon.push_back(harness::make_reconstruction(mesh, data.camera));
        kps.push_back(views[v].keypoints);
    }
    if (recon.empty()) throw std::runtime_error("no deformed_<i>.obj files in " + fit_dir);

    std::mt19937_64 rng(c.seed);
    std::uniform_int_distribution<std::size_t> pick(0, recon.size() - 1);
    double pck = 0;
    std::size_t counted = 0;
    for (std::size_t n = 0; n < pairs && recon.size() > 1; ++n) {
        const std::size_t a = pick(rng);
        std::size_t b = pick(rng);
        while (b == a) b = pick(rng);
        const double p = harness::eval_keypoint_transfer(recon[a], recon[b], kps[a], kps[b]);
        if (std::isnan(p)) continue;
        pck += p;
        ++counted;
    }
    const nlohmann::json report = {{"views", recon.size()},
                                   {"mean_iou", iou / recon.size()},
                                   {"kt_pck", counted ? pck / counted : std::nan("")},
                                   {"kt_pairs", counted},
                                   {"pck_linear", harness::eval_pck_linear(recon, kps)}};
    std::cout << report.dump(2) << '\n';
    if (!c.out.empty()) write_json(report, c.out);
    return 0;
}

int cmd_self_test(const std::vector<int>& ids) {
    const int failures = acceptance::run(ids, std::cout);
    std::printf("%d failure(s)\n", failures);
    return failures == 0 ? 0 : 1;
}

bank::SemanticBank template_bank(const Common& c, const std::string& targets, std::size_t k, double variation) {
    harness::SynthSpec spec = harness::synth_spec_from_json(read_config(c.config));
    const auto templ = harness::synth_quadruped(spec);
    geometry::VertexField features;
    if (!targets.empty())
        features = harness::reduced_features(templ.raw_features, harness::load_dataset(targets).views.pca);
    return bank::random_bank(templ.mesh, k, c.seed, variation, bank::kDefaultTopM, bank::kKeyDim, bank::kValueDim,
                             features);
}

int cmd_bank_create(const Common& c, const std::string& targets, std::size_t k, double variation) {
    const auto bk = template_bank(c, targets, k, variation);
    if (fs::path(c.out).has_parent_path()) fs::create_directories(fs::path(c.out).parent_path());
    bank::save_bank(bk, c.out);
    std::printf("bank of %zu tokens over %zu vertices -> %s\n", bk.size(), bk.num_vertices(), c.out.c_str());
    return 0;
}

int cmd_bank_inspect(const std::string& path) {
    const auto bk = bank::load_bank(path);
    std::vector<double> norms;
    for (std::size_t k = 0; k < bk.size(); ++k) {
        double s = 0;
        for (std::size_t i = 0; i < bk.offsets().dim(1); ++i) s += std::pow(bk.offsets()[k * bk.offsets().dim(1) + i], 2);
        norms.push_back(std::sqrt(s / bk.num_vertices()));
    }
    const nlohmann::json j = {{"tokens", bk.size()},
                              {"key_dim", bk.key_dim()},
                              {"value_dim", bk.value_dim()},
                              {"top_m", bk.top_m()},
                              {"vertices", bk.num_vertices()},
                              {"faces", bk.templ().faces.size()},
                              {"feature_dim", bk.features().dim},
                              {"offset_rms", norms}};
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_bank_interpolate(const Common& c, const std::string& path, std::size_t from, std::size_t to, std::size_t steps) {
    const auto bk = bank::load_bank(path);
    if (from >= bk.size() || to >= bk.size()) throw std::runtime_error("token index out of range");
    if (steps < 2) throw std::runtime_error("--steps must be at least 2");
    fs::create_directories(c.out);
    std::vector<double> wa(bk.size(), 0.0), wb(bk.size(), 0.0);
    wa[from] = wb[to] = 1.0;
    const auto a = bank::synthesize_base(bk, wa), b = bank::synthesize_base(bk, wb);
    double deviation = 0;
    for (std::size_t s = 0; s < steps; ++s) {
        const double alpha = static_cast<double>(s) / static_cast<double>(steps - 1);
        std::vector<double> w(bk.size());
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = (1 - alpha) * wa[k] + alpha * wb[k];
        const auto m = bank::synthesize_base(bk, w);
        for (std::size_t i = 0; i < m.num_vertices(); ++i)
            deviation = std::max(deviation, (m.vertices[i] - ((1 - alpha) * a.vertices[i] + alpha * b.vertices[i]))
                                                .cwiseAbs()
                                                .maxCoeff());
        geometry::save_obj(m, fs::path(c.out) / ("interp_" + std::to_string(s) + ".obj"));
    }
    std::printf("%zu shapes -> %s, max deviation from the linear blend %.2e\n", steps, c.out.c_str(), deviation);
    return 0;
}

int cmd_bank_sample(const Common& c, const std::string& path, std::size_t count, std::size_t fused) {
    const auto bk = bank::load_bank(path);
    fs::create_directories(c.out);
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t s = 0; s < count; ++s) {
        const auto w = bank::random_fusion_weights(bk.size(), fused, c.seed + s);
        geometry::save_obj(bank::synthesize_base(bk, w), fs::path(c.out) / ("sample_" + std::to_string(s) + ".obj"));
        j.push_back(w);
    }
    write_json(j, fs::path(c.out) / "weights.json");
    std::printf("%zu fused shapes -> %s\n", count, c.out.c_str());
    return 0;
}

int cmd_gradcheck(const Common& c, std::size_t max_coords, double tolerance) {
    bool ok = true;
    for (const auto& t : harness::gradient_suite(c.seed, max_coords)) {
        std::printf("%-16s max rel error %.3e  checked %zu  skipped %zu\n", t.name.c_str(), t.report.max_rel_error,
                    t.report.checked, t.report.skipped);
        ok = ok && t.report.max_rel_error < tolerance;
    }
    return ok ? 0 : 1;
}

int cmd_skeleton(const Common& c, const std::string& mesh_path) {
    const auto mesh = geometry::load_obj(mesh_path);
    const auto skel = skeleton::instantiate_quadruped(mesh);
    const auto w = skeleton::skinning_weights(mesh, skel);
    for (std::size_t b = 0; b < skel.size(); ++b) {
        double max_w = 0;
        for (std::size_t i = 0; i < w.num_vertices; ++i) max_w = std::max(max_w, w(i, b));
        std::printf("bone %2zu %-10s parent %3d  max skin weight %.3f\n", b, skeleton::role_name(skel.bones[b].role),
                    skel.bones[b].parent, max_w);
    }
    if (!c.out.empty()) write_json(skeleton::to_json(skel), c.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quadruped reconstruction with a semantic bank of skinned models"};
    app.require_subcommand(1);
    Common common;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic quadruped dataset");
    std::size_t size = 64;
    add_common(synth, common, true);
    synth->add_option("--size", size, "Image side in pixels");

    auto* fit_cmd = app.add_subcommand("fit", "Fit one instance to a dataset's views");
    std::string targets, bank_path;
    add_common(fit_cmd, common, true);
    fit_cmd->add_option("--targets", targets, "Dataset directory")->required();
    fit_cmd->add_option("--bank", bank_path, "Bank manifest")->required();

    auto* render_cmd = app.add_subcommand("render", "Render a mesh to mask.png and shaded.png");
    std::string mesh_path;
    double azimuth = 0, elevation = 0;
    add_common(render_cmd, common, true);
    render_cmd->add_option("--mesh", mesh_path, "OBJ file")->required();
    render_cmd->add_option("--azimuth", azimuth, "Degrees");
    render_cmd->add_option("--elevation", elevation, "Degrees");
    render_cmd->add_option("--size", size, "Image side in pixels");

    auto* eval = app.add_subcommand("eval", "Score a fit against a dataset, or run the acceptance criteria");
    std::string fit_dir;
    std::size_t pairs = 1000;
    bool self_test = false;
    std::vector<int> criteria;
    add_common(eval, common, false);
    eval->add_option("--targets", targets, "Dataset directory");
    eval->add_option("--fit", fit_dir, "Fit output directory");
    eval->add_option("--pairs", pairs, "Source-target pairs for keypoint transfer");
    eval->add_flag("--self-test", self_test, "Run the acceptance criteria; nonzero exit on any failure");
    eval->add_option("--criteria", criteria, "Subset of criterion ids for --self-test");

    auto* bank_cmd = app.add_subcommand("bank", "Create and explore semantic banks");
    bank_cmd->require_subcommand(1);
    std::size_t tokens = 60, from = 0, to = 1, steps = 5, count = 8, fused = 3;
    double variation = 0.2;
    auto* create = bank_cmd->add_subcommand("create", "Random bank over a synthetic template");
    add_common(create, common, true);
    create->add_option("--targets", targets, "Dataset whose feature reduction the bank adopts");
    create->add_option("--tokens", tokens, "Bank size");
    create->add_option("--variation", variation, "Per-token shape variation");
    auto* inspect = bank_cmd->add_subcommand("inspect", "Print bank dimensions and offset magnitudes");
    inspect->add_option("--bank", bank_path, "Bank manifest")->required();
    auto* interp = bank_cmd->add_subcommand("interpolate", "Base shapes along the blend of two tokens");
    add_common(interp, common, true);
    interp->add_option("--bank", bank_path, "Bank manifest")->required();
    interp->add_option("--from", from, "First token");
    interp->add_option("--to", to, "Second token");
    interp->add_option("--steps", steps, "Shapes along the path, endpoints included");
    auto* sample = bank_cmd->add_subcommand("sample", "Base shapes from random fusions of a few tokens");
    add_common(sample, common, true);
    sample->add_option("--bank", bank_path, "Bank manifest")->required();
    sample->add_option("--count", count, "Shapes to write");
    sample->add_option("--fused", fused, "Tokens per fusion");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss term");
    std::size_t max_coords = 0;
    double tolerance = 1e-4;
    add_common(gradcheck, common, false);
    gradcheck->add_option("--max-coords", max_coords, "Coordinates probed per tensor (0 = all)");
    gradcheck->add_option("--tolerance", tolerance, "Failing relative error");

    auto* skel = app.add_subcommand("skeleton", "Instantiate the quadruped skeleton of a mesh");
    add_common(skel, common, false);
    skel->add_option("--mesh", mesh_path, "OBJ file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(common, size);
        if (fit_cmd->parsed()) return cmd_fit(common, targets, bank_path);
        if (render_cmd->parsed()) return cmd_render(common, mesh_path, azimuth, elevation, size);
        if (eval->parsed()) {
            if (self_test) return cmd_self_test(criteria);
            if (targets.empty() || fit_dir.empty()) throw std::runtime_error("eval needs --targets and --fit, or --self-test");
            return cmd_eval(common, targets, fit_dir, pairs);
        }
        if (create->parsed()) return cmd_bank_create(common, targets, tokens, variation);
        if (inspect->parsed()) return cmd_bank_inspect(bank_path);
        if (interp->parsed()) return cmd_bank_interpolate(common, bank_path, from, to, steps);
        if (sample->parsed()) return cmd_bank_sample(common, bank_path, count, fused);
        if (gradcheck->parsed()) return cmd_gradcheck(common, max_coords, tolerance);
        if (skel->parsed()) return cmd_skeleton(common, mesh_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
