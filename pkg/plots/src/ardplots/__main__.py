from .render import main
import sys

sys.exit(main())
