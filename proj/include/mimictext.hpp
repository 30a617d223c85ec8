#pragma once

#include "mimictext/config.hpp"
#include "mimictext/csv.hpp"
#include "mimictext/digest.hpp"
#include "mimictext/ehr_model.hpp"
#include "mimictext/emit.hpp"
#include "mimictext/error.hpp"
#include "mimictext/evaluate.hpp"
#include "mimictext/features.hpp"
#include "mimictext/ingest.hpp"
#include "mimictext/pipeline.hpp"
#include "mimictext/rng.hpp"
#include "mimictext/synth.hpp"
#include "mimictext/text_util.hpp"
#include "mimictext/textualize.hpp"
#include "mimictext/zeroshot.hpp"
