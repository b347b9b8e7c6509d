#pragma once

#include "pipert/errors.hpp"
#include "pipert/frames.hpp"
#include "pipert/formats.hpp"
#include "pipert/tokenizer.hpp"
#include "pipert/index.hpp"
#include "pipert/weighting.hpp"
#include "pipert/retrieval.hpp"
#include "pipert/metrics.hpp"
#include "pipert/transformers.hpp"
#include "pipert/pipeline.hpp"
#include "pipert/compiler.hpp"
#include "pipert/experiment.hpp"
#include "pipert/dsl.hpp"
