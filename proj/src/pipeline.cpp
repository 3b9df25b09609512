#include "fcl/pipeline.hpp"

#include "fcl/errors.hpp"

namespace fcl {

Pretrained pretrain_knowledge_base(const RunConfig& cfg, const TaskSuite& suite) {
    Pretrained p;
    p.kb = init_model(cfg.model);
    p.log = pretrain_model(p.kb, suite.pretrain, suite.pretrain_heldout, cfg.pretrain);
    p.backward_row = evaluate_snapshot(p.kb, nullptr, suite.backward);
    return p;
}

RunReport run_method(const RunConfig& cfg, const std::string& method, const KnowledgeBase& kb0,
                     const TaskSuite& suite, const StreamObserver& observer, std::optional<StreamProgress> resume) {
    if (method == "centralized") return run_stream(kb0, cfg.schedule, suite, observer, std::move(resume));
    if (resume) throw ConfigError("only the centralized method can resume");
    if (method == "swadt") return swadt_run_stream(kb0, cfg.schedule, suite, cfg.swadt, observer);
    if (method == "naive") return naive_sequential(kb0, cfg.schedule, suite, observer);
    if (method == "ceiling") return multitask_ceiling(kb0, cfg.schedule, suite, observer);
    throw ConfigError("unknown method '" + method + "'");
}

}  // namespace fcl
