#pragma once

#include "anubis/bucketing.hpp"
#include "anubis/contaminate.hpp"
#include "anubis/core_stats.hpp"
#include "anubis/error.hpp"
#include "anubis/eval_plus.hpp"
#include "anubis/experiment.hpp"
#include "anubis/kv_config.hpp"
#include "anubis/multiset.hpp"
#include "anubis/oracles.hpp"
#include "anubis/random.hpp"
#include "anubis/scored_io.hpp"
#include "anubis/tester.hpp"
#include "anubis/token_dist.hpp"
#include "anubis/tokenizer.hpp"
#include "anubis/toy_model.hpp"
