#pragma once

#include "seqground/baselines.hpp"
#include "seqground/checkpoint.hpp"
#include "seqground/config.hpp"
#include "seqground/dataset.hpp"
#include "seqground/decision.hpp"
#include "seqground/encoders.hpp"
#include "seqground/errors.hpp"
#include "seqground/geometry.hpp"
#include "seqground/grad_check.hpp"
#include "seqground/metrics.hpp"
#include "seqground/model.hpp"
#include "seqground/nn.hpp"
#include "seqground/ops.hpp"
#include "seqground/optim.hpp"
#include "seqground/order_embed.hpp"
#include "seqground/pipeline.hpp"
#include "seqground/selfcheck.hpp"
#include "seqground/stacks.hpp"
#include "seqground/synth.hpp"
#include "seqground/tensor.hpp"
#include "seqground/trainer.hpp"
