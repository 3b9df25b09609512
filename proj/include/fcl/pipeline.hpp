#pragma once

#include <string>

#include "fcl/baselines.hpp"
#include "fcl/config.hpp"
#include "fcl/continual.hpp"
#include "fcl/eval.hpp"
#include "fcl/taskgen.hpp"
#include "fcl/training.hpp"

namespace fcl {

struct Pretrained {
    KnowledgeBase kb;
    TrainingLog log;
    std::vector<double> backward_row;  // error on each monolingual test set
};

// init_model + pretrain_model on the suite's monolingual mixture.
Pretrained pretrain_knowledge_base(const RunConfig& cfg, const TaskSuite& suite);

// Dispatches on method: centralized, swadt, naive or ceiling.
RunReport run_method(const RunConfig& cfg, const std::string& method, const KnowledgeBase& kb0,
                     const TaskSuite& suite, const StreamObserver& observer = {},
                     std::optional<StreamProgress> resume = std::nullopt);

}  // namespace fcl
