# evaluation: synthetic ground truth, error metrics and run reports
