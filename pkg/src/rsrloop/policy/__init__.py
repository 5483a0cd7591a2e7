from .env import (CUBE_WEIGHTS, TBLOCK_WEIGHTS, PushEnv, TaskConfig, observe, task_reward_cube,
                  task_reward_tblock)
from .nets import (ActionDist, ActionSample, PolicyNet, ValueNet, as_callable, load_checkpoint,
                   policy_forward, sample_action, save_checkpoint)
from .ppo import (PPOAgent, PpoConfig, clipped_surrogate, evaluate_policy, gae_advantages, ppo_update,
                  train_policy)
