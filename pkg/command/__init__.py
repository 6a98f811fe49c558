# command: one module per duoflow sub-command (synthesize, estimate, evaluate)
