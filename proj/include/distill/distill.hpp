#pragma once

#include "distill/config.hpp"
#include "distill/dataset_io.hpp"
#include "distill/decoding.hpp"
#include "distill/error.hpp"
#include "distill/filters.hpp"
#include "distill/lmcore.hpp"
#include "distill/pairgen.hpp"
#include "distill/pipeline.hpp"
#include "distill/quantize.hpp"
#include "distill/rng.hpp"
#include "distill/task_model.hpp"
#include "distill/textmetrics.hpp"
#include "distill/toy_corpus.hpp"
#include "distill/wire.hpp"
#include "distill/cli.hpp"
