from sublab.cli.main import main

raise SystemExit(main())
