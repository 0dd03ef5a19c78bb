#pragma once

#include "catmix/commands.hpp"
#include "catmix/corpus.hpp"
#include "catmix/em.hpp"
#include "catmix/errors.hpp"
#include "catmix/mixture.hpp"
#include "catmix/parallel.hpp"
#include "catmix/random.hpp"
#include "catmix/report.hpp"
#include "catmix/selection.hpp"
#include "catmix/synth.hpp"
