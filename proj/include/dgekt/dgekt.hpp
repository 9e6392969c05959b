#pragma once

#include "dgekt/adam.hpp"
#include "dgekt/autodiff.hpp"
#include "dgekt/checkpoint.hpp"
#include "dgekt/config.hpp"
#include "dgekt/distill.hpp"
#include "dgekt/dual_graph.hpp"
#include "dgekt/error.hpp"
#include "dgekt/gradcheck.hpp"
#include "dgekt/graph_encoders.hpp"
#include "dgekt/init.hpp"
#include "dgekt/instrumentation.hpp"
#include "dgekt/interaction_store.hpp"
#include "dgekt/model.hpp"
#include "dgekt/sequence_predictor.hpp"
#include "dgekt/sparse.hpp"
#include "dgekt/synthetic.hpp"
#include "dgekt/trainer.hpp"
