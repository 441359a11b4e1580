#include <fstream>

#include <nlohmann/json.hpp>

#include "quadbank/fit.hpp"

namespace quadbank::fit {

void save_fit_result(const FitResult& r, const FitConfig& config, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json poses = nlohmann::json::array();
    for (std::size_t v = 0; v < r.views.size(); ++v) {
        const ViewResult& vr = r.views[v];
        poses.push_back({{"view", v},
                         {"skipped", vr.skipped},
                         {"hypothesis", vr.hypothesis},
                         {"azimuths_deg", vr.azimuths_deg},
                         {"scores", vr.scores},
                         {"probabilities", vr.probabilities},
                         {"pose", skeleton::to_json(vr.pose)}});
        if (!vr.skipped) geometry::save_obj(r.posed(v), dir / ("deformed_" + std::to_string(v) + ".obj"));
    }
    {
        std::ofstream out(dir / "poses.json");
        if (!out) throw FitError("cannot write " + (dir / "poses.json").string());
        out << poses.dump(2) << '\n';
    }
    geometry::save_obj(r.base, dir / "base.obj");
    {
        std::ofstream out(dir / "losses.csv");
        if (!out) throw FitError("cannot write " + (dir / "losses.csv").string());
        out << "iteration,stage,sigma,total,mask,image,feature,deform,articulation,hyp,adversarial,d_real,d_fake,d_r1\n";
        for (const IterationLog& l : r.history) {
            out << l.iteration << ',' << l.stage << ',' << l.sigma << ',' << l.total << ',' << l.mask << ',' << l.image
                << ',' << l.feature << ',' << l.deform << ',' << l.articulation << ',' << l.hyp << ',' << l.adversarial
                << ',' << l.discriminator.real_term << ',' << l.discriminator.fake_term << ',' << l.discriminator.r1
                << '\n';
        }
    }
    nlohmann::json views = nlohmann::json::array();
    for (const ViewResult& vr : r.views) {
        views.push_back({{"reconstruction", vr.reconstruction}, {"mask_loss", vr.mask_loss}, {"skipped", vr.skipped}});
    }
    const render::Light light = r.light.resolve();
    const nlohmann::json report = {
        {"config", to_json(config)},
        {"bank_weights", r.bank_weights},
        {"shape_embedding", r.shape.values},
        {"skeleton", skeleton::to_json(r.skeleton)},
        {"light",
         {{"ambient", light.ambient},
          {"diffuse", light.diffuse},
          {"direction", {light.direction.x(), light.direction.y(), light.direction.z()}}}},
        {"views", views},
        {"final_loss", r.history.empty() ? 0.0 : r.history.back().total},
        {"warnings", r.warnings}};
    std::ofstream out(dir / "report.json");
    if (!out) throw FitError("cannot write " + (dir / "report.json").string());
    out << report.dump(2) << '\n';
}

}  // namespace quadbank::fit
