from .binary import (LagrangianSolution, flip_margin, grid_flip_margin, landscape_grid,
                     min_weight_change, sd_loss_binary, sd_loss_binary_grad)
from .bounds import (BoundScenario, check_corollary1, check_lemma1, check_reverse_bound,
                     default_scenario, lipschitz_constant, oracle_rule, scenario_grid,
                     single_gradient_rule, zero_rule)
from .prs import PrsModel, model_scores, modified_entropy, modified_entropy_batch, prs_fit
from .sisa import single_gradient_cost_ratio, sisa_breakeven, sisa_cost_ratio
from .stats import UndefinedCorrelation, pearson, spearman
