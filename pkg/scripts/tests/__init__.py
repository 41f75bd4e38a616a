# PMRWM tuning tests
