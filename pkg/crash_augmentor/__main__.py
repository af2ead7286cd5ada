import sys

from crash_augmentor.main import main

sys.exit(main())
