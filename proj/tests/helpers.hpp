// Shared fixtures for the unit tests.
#pragma once

#include <array>
#include <vector>

#include "surroval/model_tte.hpp"

namespace helpers {

using namespace surroval;

// in-memory dataset builder; row = trial, trt, timeS, statusS, timeT, statusT
inline SurrogacyDataset make_ds(const std::vector<std::array<double, 6>>& rows) {
  SurrogacyDataset ds;
  int pid = 1;
  int kmax = 0;
  for (const auto& r : rows) {
    SubjectRecord s;
    s.patient_id = pid++;
    s.trial_id = static_cast<int>(r[0]);
    s.trt = static_cast<int>(r[1]);
    s.time_s = r[2];
    s.status_s = static_cast<int>(r[3]);
    s.time_t = r[4];
    s.status_t = static_cast<int>(r[5]);
    kmax = std::max(kmax, s.trial_id);
    ds.subjects.push_back(s);
  }
  ds.n_trials = kmax;
  for (int i = 1; i <= pid - 1; ++i) ds.original_patient_ids.push_back(i);
  for (int i = 1; i <= kmax; ++i) ds.original_trial_ids.push_back(i);
  return ds;
}

inline Model1Bases flat_bases(double tmax, double smax_g = 0.0) {
  SplineBasis bs(SplineKind::M, 4, {0.0, tmax / 3.0, 2.0 * tmax / 3.0, tmax});
  SplineBasis bt = bs;
  std::optional<SplineBasis> bg;
  if (smax_g > 0.0)
    bg.emplace(SplineKind::B, 4, std::vector<double>{0.0, smax_g / 2.0, smax_g});
  return Model1Bases{bs, bt, bg};
}

// coefficients that make lambda0 = level exactly
inline Eigen::VectorXd const_hazard_coef(const SplineBasis& b, double level) {
  std::vector<double> ext;
  ext.insert(ext.end(), b.order(), b.knots().front());
  ext.insert(ext.end(), b.knots().begin() + 1, b.knots().end() - 1);
  ext.insert(ext.end(), b.order(), b.knots().back());
  Eigen::VectorXd coef(b.n_basis());
  for (int i = 0; i < b.n_basis(); ++i)
    coef[i] = level * (ext[static_cast<std::size_t>(i + b.order())] -
                       ext[static_cast<std::size_t>(i)]) /
              b.order();
  return coef;
}

}  // namespace helpers
