#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "maskprop/baseline.hpp"
#include "maskprop/config.hpp"
#include "maskprop/metrics.hpp"
#include "maskprop/net.hpp"
#include "maskprop/phantom.hpp"
#include "maskprop/propagate.hpp"
#include "maskprop/train.hpp"
#include "maskprop/volume.hpp"

namespace fs = std::filesystem;
using namespace maskprop;

namespace {

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw CLI::ValidationError("missing file: " + path);
}

PhantomSpec phantom_spec_from_config(const std::string& path) {
  auto cfg = FlatConfig::from_file(path);
  PhantomSpec spec;
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  spec.depth = static_cast<int>(cfg.get_int("depth_t", spec.depth));
  spec.height = static_cast<int>(cfg.get_int("height", spec.height));
  spec.width = static_cast<int>(cfg.get_int("width", spec.width));
  spec.n_structures = static_cast<int>(cfg.get_int("n_structures", spec.n_structures));
  spec.spacing.z = cfg.get_double("spacing_z", spec.spacing.z);
  spec.spacing.y = cfg.get_double("spacing_y", spec.spacing.y);
  spec.spacing.x = cfg.get_double("spacing_x", spec.spacing.x);
  spec.noise_level = cfg.get_double("noise_level", spec.noise_level);
  spec.deform_smoothness = cfg.get_double("deform_smoothness", spec.deform_smoothness);
  cfg.finish();
  return spec;
}

struct TrainSetup {
  NetConfig net;
  TrainConfig train;
  std::string schedule_mode;
  long schedule_period = 100;
  long schedule_k = 3;
  double sched_init_frac = 0.164;
  double sched_floor_frac = 0.03;
  double sched_budget_frac = 0.035;
};

TrainSetup train_setup_from_config(const std::string& path) {
  auto cfg = FlatConfig::from_file(path);
  TrainSetup s;
  s.net.w = static_cast<int>(cfg.get_int("net.w", s.net.w));
  s.net.in_hw = static_cast<int>(cfg.get_int("net.in_hw", s.net.in_hw));
  {
    std::vector<long> ch = cfg.get_int_list("net.channels", {8, 8, 16, 16, 32});
    if (ch.size() != 5) throw std::runtime_error(path + ": net.channels needs 5 entries");
    for (int i = 0; i < 5; ++i) s.net.channels[i] = static_cast<int>(ch[i]);
    std::vector<long> rates = cfg.get_int_list("net.atrous_rates", {1, 6, 12, 18});
    if (rates.size() != 4) throw std::runtime_error(path + ": net.atrous_rates needs 4 entries");
    for (int i = 0; i < 4; ++i) s.net.atrous_rates[i] = static_cast<int>(rates[i]);
  }
  s.net.dropout_enc = cfg.get_double("net.dropout_enc", s.net.dropout_enc);
  s.net.dropout_rec = cfg.get_double("net.dropout_rec", s.net.dropout_rec);
  s.net.dropout_dec = cfg.get_double("net.dropout_dec", s.net.dropout_dec);

  s.train.epochs = static_cast<int>(cfg.get_int("train.epochs", s.train.epochs));
  s.train.lr_init = cfg.get_double("train.lr_init", s.train.lr_init);
  s.train.lr_final = cfg.get_double("train.lr_final", s.train.lr_final);
  s.train.final_lr_epochs = static_cast<int>(cfg.get_int("train.final_lr_epochs", 2));
  s.train.tbptt_chunk = static_cast<int>(cfg.get_int("train.tbptt_chunk", s.train.tbptt_chunk));
  s.train.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
  s.train.teacher_forcing = cfg.get_bool("train.teacher_forcing", false);
  s.train.warmup_epochs =
      static_cast<int>(cfg.get_int("train.warmup_epochs", s.train.warmup_epochs));
  s.train.lambda = cfg.get_double("loss.lambda", s.train.lambda);
  {
    const std::string wf = cfg.get_string("loss.window_factor", "literal");
    if (wf == "literal")
      s.train.window_factor = WindowFactor::literal;
    else if (wf == "off")
      s.train.window_factor = WindowFactor::off;
    else
      throw std::runtime_error(path + ": loss.window_factor must be literal or off");
  }
  s.schedule_mode = cfg.get_string("schedule.mode", "decremental");
  s.schedule_period = cfg.get_int("schedule.period", s.schedule_period);
  s.schedule_k = cfg.get_int("schedule.k", s.schedule_k);
  s.sched_init_frac = cfg.get_double("schedule.init_frac", s.sched_init_frac);
  s.sched_floor_frac = cfg.get_double("schedule.floor_frac", s.sched_floor_frac);
  s.sched_budget_frac = cfg.get_double("schedule.budget_frac", s.sched_budget_frac);
  cfg.finish();
  return s;
}

std::vector<fs::path> patient_dirs(const std::string& data_dir) {
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(data_dir))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no patient directories under " + data_dir);
  return dirs;
}

int run_train_one(const TrainSetup& setup, const std::vector<fs::path>& dirs,
                  const std::string& mode, int structure, const std::string& out_ckpt,
                  const std::string& out_log) {
  std::vector<TrainPatient> patients;
  for (const auto& d : dirs) {
    TrainPatient p;
    p.name = d.filename().string();
    p.volume = read_mvol_volume((d / "volume.mvol").string());
    p.gt = read_mvol_mask((d / ("mask_" + std::to_string(structure) + ".mvol")).string());
    patients.push_back(std::move(p));
  }
  TrainConfig tc = setup.train;
  tc.mode = mode == "few_shot" ? TrainMode::few_shot : TrainMode::full;
  if (tc.mode == TrainMode::few_shot) {
    if (setup.schedule_mode == "interval") {
      for (auto& p : patients)
        p.schedule = fixed_interval_schedule(p.volume.depth, static_cast<int>(setup.schedule_period),
                                             static_cast<int>(setup.schedule_k));
    } else if (setup.schedule_mode == "decremental") {
      std::vector<int> depths;
      for (const auto& p : patients) depths.push_back(p.volume.depth);
      auto sch = decremental_schedule(depths, setup.sched_budget_frac, setup.sched_floor_frac,
                                      setup.sched_init_frac);
      for (std::size_t i = 0; i < patients.size(); ++i) patients[i].schedule = sch[i];
    } else {
      throw std::runtime_error("schedule.mode must be interval or decremental");
    }
  }
  TrainLog log;
  auto ckpt = train(patients, setup.net, tc, &log);
  save_checkpoint(ckpt, out_ckpt);
  write_train_log_csv(log, out_log);
  std::cout << "wrote " << out_ckpt << " (final epoch mean loss "
            << log.epoch_mean_loss.back() << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric mask propagation toolkit"};
  app.require_subcommand(1);

  // gen-phantom
  std::string gp_spec, gp_out;
  auto* gen = app.add_subcommand("gen-phantom", "Generate a synthetic phantom volume");
  gen->add_option("--spec", gp_spec, "phantom spec config file")->required();
  gen->add_option("--out", gp_out, "output directory")->required();

  // train
  std::string tr_mode = "full", tr_data, tr_config, tr_out, tr_log, tr_structure = "0";
  int tr_jobs = 1;
  auto* trn = app.add_subcommand("train", "Train a propagation model");
  trn->add_option("--mode", tr_mode, "full or few_shot")
      ->check(CLI::IsMember({"full", "few_shot"}));
  trn->add_option("--data", tr_data, "dataset directory (one subdir per patient)")->required();
  trn->add_option("--config", tr_config, "training config file")->required();
  trn->add_option("--out", tr_out, "output checkpoint (or directory with --structure all)")
      ->required();
  trn->add_option("--log", tr_log, "training log CSV (default: <out>.log.csv)");
  trn->add_option("--structure", tr_structure, "structure index or 'all'");
  trn->add_option("--jobs", tr_jobs, "parallel jobs when training all structures");

  // propagate
  std::string pr_ckpt, pr_volume, pr_seeds, pr_out, pr_fuse = "last";
  auto* prp = app.add_subcommand("propagate", "Propagate seed masks through a volume");
  prp->add_option("--ckpt", pr_ckpt)->required();
  prp->add_option("--volume", pr_volume)->required();
  prp->add_option("--seeds", pr_seeds)->required();
  prp->add_option("--out", pr_out)->required();
  prp->add_option("--fuse", pr_fuse, "overlap fusion policy")->check(CLI::IsMember({"last", "mean"}));

  // eval
  std::string ev_pred, ev_gt, ev_report, ev_per_slice, ev_label;
  auto* ev = app.add_subcommand("eval", "Evaluate a prediction against ground truth");
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--gt", ev_gt)->required();
  ev->add_option("--report", ev_report, "output CSV")->required();
  ev->add_option("--per-slice", ev_per_slice, "optional per-slice CSV");
  ev->add_option("--label", ev_label, "structure label in the report");

  // baseline
  std::string bl_method, bl_sparse, bl_out;
  auto* bl = app.add_subcommand("baseline", "Non-learning propagation baselines");
  bl->add_option("--method", bl_method)->required()->check(CLI::IsMember({"zero", "fbs"}));
  bl->add_option("--sparse", bl_sparse, "directory with mask.mvol and schedule.txt")->required();
  bl->add_option("--out", bl_out)->required();

  // schedule
  std::string sc_mode;
  long sc_T = 0, sc_period = 100, sc_k = 3, sc_n = 1;
  std::string sc_T_list;
  double sc_init = 0.164, sc_floor = 0.03, sc_budget = 0.035;
  auto* sc = app.add_subcommand("schedule", "Print annotation schedules");
  sc->add_option("--mode", sc_mode)->required()->check(CLI::IsMember({"interval", "decremental"}));
  sc->add_option("--T", sc_T, "slice count per patient");
  sc->add_option("--period", sc_period);
  sc->add_option("--k", sc_k, "consecutive annotations per block");
  sc->add_option("--n-patients", sc_n);
  sc->add_option("--T-list", sc_T_list, "comma-separated per-patient depths");
  sc->add_option("--init-frac", sc_init);
  sc->add_option("--floor-frac", sc_floor);
  sc->add_option("--budget-frac", sc_budget);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  try {
    if (gen->parsed()) {
      require_file(gp_spec);
      const auto spec = phantom_spec_from_config(gp_spec);
      const auto ph = generate_phantom(spec);
      fs::create_directories(gp_out);
      write_mvol(ph.volume, (fs::path(gp_out) / "volume.mvol").string());
      for (std::size_t i = 0; i < ph.masks.size(); ++i)
        write_mvol(ph.masks[i], (fs::path(gp_out) / ("mask_" + std::to_string(i) + ".mvol")).string());
      std::cout << "wrote " << ph.masks.size() << " structure(s) to " << gp_out << "\n";
      return 0;
    }

    if (trn->parsed()) {
      require_file(tr_config);
      if (!fs::is_directory(tr_data)) throw CLI::ValidationError("missing directory: " + tr_data);
      const auto setup = train_setup_from_config(tr_config);
      const auto dirs = patient_dirs(tr_data);
      if (tr_structure == "all") {
        int n_structures = 0;
        while (fs::exists(dirs[0] / ("mask_" + std::to_string(n_structures) + ".mvol")))
          ++n_structures;
        if (n_structures == 0) throw std::runtime_error("no mask_<i>.mvol files found");
        fs::create_directories(tr_out);
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_structures));
        const int jobs = std::max(1, tr_jobs);
        for (int s = 0; s < n_structures; s += jobs) {
          const int hi = std::min(n_structures, s + jobs);
          for (int i = s; i < hi; ++i)
            pool.emplace_back([&, i] {
              try {
                const auto base = fs::path(tr_out) / ("structure_" + std::to_string(i));
                run_train_one(setup, dirs, tr_mode, i, base.string() + ".ckpt",
                              base.string() + ".log.csv");
              } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
              }
            });
          for (auto& t : pool) t.join();
          pool.clear();
        }
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
        return 0;
      }
      const int structure = std::stoi(tr_structure);
      const std::string log_path = tr_log.empty() ? tr_out + ".log.csv" : tr_log;
      return run_train_one(setup, dirs, tr_mode, structure, tr_out, log_path);
    }

    if (prp->parsed()) {
      require_file(pr_ckpt);
      require_file(pr_volume);
      require_file(pr_seeds);
      const auto ckpt = load_checkpoint(pr_ckpt);
      const auto vol = read_mvol_volume(pr_volume);
      const auto seeds = read_mvol_mask(pr_seeds);
      const auto res = propagate(ckpt, vol, seeds, fuse_policy_from_string(pr_fuse));
      write_mvol(res.mask, pr_out);
      std::cout << "wrote " << pr_out << " (fuse policy " << to_string(res.policy) << ")\n";
      return 0;
    }

    if (ev->parsed()) {
      require_file(ev_pred);
      require_file(ev_gt);
      const auto pred = read_mvol_mask(ev_pred);
      const auto gt = read_mvol_mask(ev_gt);
      SliceScores slices;
      const auto rep = evaluate(pred, gt, gt.spacing, ev_per_slice.empty() ? nullptr : &slices);
      const std::string label =
          ev_label.empty() ? fs::path(ev_pred).stem().string() : ev_label;
      std::ofstream f(ev_report);
      if (!f) throw std::runtime_error("cannot open for writing: " + ev_report);
      f << metrics_csv_header() << "\n" << metrics_csv_row(label, rep) << "\n";
      if (!rep.distances_defined)
        std::cerr << "warning: surface distances undefined (an empty mask)\n";
      if (!ev_per_slice.empty()) {
        std::ofstream ps(ev_per_slice);
        if (!ps) throw std::runtime_error("cannot open for writing: " + ev_per_slice);
        ps << "slice,dice,hdd_mm\n";
        for (std::size_t t = 0; t < slices.dice.size(); ++t) {
          char buf[128];
          std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g", t, slices.dice[t], slices.hdd_mm[t]);
          ps << buf << "\n";
        }
      }
      std::cout << metrics_csv_row(label, rep) << "\n";
      return 0;
    }

    if (bl->parsed()) {
      const auto mask_path = (fs::path(bl_sparse) / "mask.mvol").string();
      const auto sched_path = (fs::path(bl_sparse) / "schedule.txt").string();
      require_file(mask_path);
      require_file(sched_path);
      const auto annotated = read_mvol_mask(mask_path);
      const auto schedules = read_schedules(sched_path);
      if (schedules.size() != 1)
        throw std::runtime_error("baseline: schedule.txt must hold exactly one line");
      if (bl_method == "zero") {
        write_mvol(zero_order_propagate(annotated, schedules[0]), bl_out);
      } else {
        const auto res = fill_between_slices(annotated, schedules[0]);
        if (res.fell_back_to_zero_order)
          std::cerr << "warning: fewer than 2 annotations; fell back to zero-order\n";
        write_mvol(res.mask, bl_out);
      }
      std::cout << "wrote " << bl_out << "\n";
      return 0;
    }

    if (sc->parsed()) {
      if (sc_mode == "interval") {
        if (sc_T <= 0) throw CLI::ValidationError("--T is required for interval mode");
        const auto s = fixed_interval_schedule(static_cast<int>(sc_T), static_cast<int>(sc_period),
                                               static_cast<int>(sc_k));
        for (std::size_t i = 0; i < s.indices.size(); ++i)
          std::cout << (i ? " " : "") << s.indices[i];
        std::cout << "\n";
        return 0;
      }
      std::vector<int> depths;
      if (!sc_T_list.empty()) {
        std::istringstream ss(sc_T_list);
        std::string item;
        while (std::getline(ss, item, ',')) depths.push_back(std::stoi(item));
      } else {
        if (sc_T <= 0) throw CLI::ValidationError("--T or --T-list is required");
        depths.assign(static_cast<std::size_t>(sc_n), static_cast<int>(sc_T));
      }
      const auto schedules = decremental_schedule(depths, sc_budget, sc_floor, sc_init);
      for (const auto& s : schedules) {
        for (std::size_t i = 0; i < s.indices.size(); ++i)
          std::cout << (i ? " " : "") << s.indices[i];
        std::cout << "\n";
      }
      std::cerr << "annotated fraction: " << annotation_fraction(schedules, depths) << "\n";
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
