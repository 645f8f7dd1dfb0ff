#include "ablation.hpp"

#include <cstdio>
#include <filesystem>

namespace dg {

std::string variant_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::full: return "full";
        case AblationVariant::no_box_encoder: return "no-box-encoder";
        case AblationVariant::no_fviz: return "no-fviz";
        case AblationVariant::views_one: return "views-1";
        case AblationVariant::views_two: return "views-2";
        case AblationVariant::views_all: return "views-all";
        case AblationVariant::cfg_scale_sweep: return "cfg-sweep";
    }
    fail(ErrorKind::InvalidArgument, "invalid ablation variant");
}

AblationVariant parse_variant(const std::string& name) {
    if (name == "full") return AblationVariant::full;
    if (name == "no-box-encoder") return AblationVariant::no_box_encoder;
    if (name == "no-fviz") return AblationVariant::no_fviz;
    if (name == "views-1") return AblationVariant::views_one;
    if (name == "views-2") return AblationVariant::views_two;
    if (name == "views-all") return AblationVariant::views_all;
    if (name == "cfg-sweep") return AblationVariant::cfg_scale_sweep;
    fail(ErrorKind::InvalidArgument,
         "unknown ablation variant \"" + name +
             "\" (expected full, no-box-encoder, no-fviz, views-1, views-2, "
             "views-all or cfg-sweep)");
}

TrainConfig apply_variant(AblationVariant v, TrainConfig base) {
    switch (v) {
        case AblationVariant::full:
        case AblationVariant::cfg_scale_sweep: break;
        case AblationVariant::no_box_encoder: base.model.box_encoder = false; break;
        case AblationVariant::no_fviz: base.model.visibility_filter = false; break;
        case AblationVariant::views_one:
            base.model.attended_views = AttendedViews::one;
            break;
        case AblationVariant::views_two:
            base.model.attended_views = AttendedViews::two;
            break;
        case AblationVariant::views_all:
            base.model.attended_views = AttendedViews::all;
            break;
    }
    return base;
}

const std::vector<double> kCfgSweepScales = {1.5, 2.0, 2.5, 3.0, 4.0};

namespace {

std::string scale_tag(double s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", s);
    return buf;
}

// Loads the variant checkpoint, training it first when absent.  An
// existing checkpoint must echo the variant config exactly; anything
// else means the directory holds a different experiment.
std::unique_ptr<Model<float>> variant_model(const TrainConfig& cfg, const Dataset& data,
                                            const std::string& dir) {
    const std::string ckpt_path = dir + "/ckpt_final.bin";
    if (!std::filesystem::exists(ckpt_path)) {
        Trainer trainer(cfg, data);
        run_training(trainer, dir);
    }
    Checkpoint ck = read_checkpoint(ckpt_path);
    require(dump_json(train_config_to_json(ck.config)) ==
                dump_json(train_config_to_json(cfg)),
            ErrorKind::InvalidArgument,
            "existing checkpoint " + ckpt_path +
                " was trained with a different config; refusing to reuse it");
    return build_model(ck);
}

AblationRun evaluate_into(const Model<float>& model, const Dataset& data,
                          const NoiseSchedule& sched, const EvalOptions& opt,
                          const std::string& label, const std::string& path) {
    AblationRun run;
    run.label = label;
    run.report_path = path;
    run.report = evaluate_model(model, data, sched, opt);
    write_text_file(path, dump_json(report_to_json(run.report)) + "\n");
    return run;
}

}  // namespace

std::vector<AblationRun> run_ablation(AblationVariant v, const TrainConfig& base,
                                      const Dataset& data, const std::string& out_dir,
                                      const EvalOptions& eval_base) {
    const TrainConfig cfg = apply_variant(v, base);
    cfg.validate();
    const std::string dir = out_dir + "/" + variant_name(v);
    std::filesystem::create_directories(dir);
    const auto model = variant_model(cfg, data, dir);
    const NoiseSchedule sched = make_schedule(cfg.schedule);

    std::vector<AblationRun> runs;
    if (v == AblationVariant::cfg_scale_sweep) {
        for (double scale : kCfgSweepScales) {
            for (bool zero : {true, false}) {
                EvalOptions opt = eval_base;
                opt.sampling.cfg_scale = scale;
                opt.sampling.map_null_zero = zero;
                const std::string tag =
                    "cfg" + scale_tag(scale) + (zero ? "_zero" : "_shared");
                runs.push_back(evaluate_into(*model, data, sched, opt, tag,
                                             dir + "/report_" + tag + ".json"));
            }
        }
    } else {
        runs.push_back(evaluate_into(*model, data, sched, eval_base, variant_name(v),
                                     dir + "/report.json"));
    }
    return runs;
}

}  // namespace dg
