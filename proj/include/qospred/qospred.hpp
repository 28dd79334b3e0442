#pragma once

// Umbrella header.

#include "config.hpp"
#include "corpus.hpp"
#include "encoder.hpp"
#include "error.hpp"
#include "eval_suite.hpp"
#include "fusion_head.hpp"
#include "mc_uncertainty.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "runner.hpp"
#include "synthetic.hpp"
#include "templater.hpp"
#include "tokenizer.hpp"
#include "trainer.hpp"
