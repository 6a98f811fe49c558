# solvers: layer (IRLS) and flow (primal-dual) half-steps plus the outer alternation
