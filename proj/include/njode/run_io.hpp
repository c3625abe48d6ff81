#pragma once

#include <span>
#include <string>
#include <vector>

#include "njode/model.hpp"
#include "njode/objective.hpp"
#include "njode/training.hpp"

namespace njode {

// epoch,train_loss,test_loss,oracle_loss,relative_difference,eval_metric
std::string curves_csv(std::span<const LossReport> curve);
std::vector<LossReport> parse_curves_csv(std::string_view csv);

// path_id,t,coord,y,xhat_oracle,observed -- one row per grid point and
// coordinate. `oracle` may be empty (column written as nan).
std::string predictions_csv(std::span<const Path> paths, std::span<const ForwardTrace> traces,
                            std::span<const std::vector<double>> oracle, const TimeGrid& grid);

// n1,m,repeat,min_metric,last_metric,mean_metric
std::string study_csv(std::span<const StudyRow> rows);

// Conventions the numbers in a run depend on, stored in every config.json.
std::string decisions_metadata_json();

}  // namespace njode
