"""Source pretraining and co-training of the source and target agents."""
