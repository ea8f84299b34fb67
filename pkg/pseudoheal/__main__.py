from pseudoheal import create_cli

create_cli()(prog_name='pseudoheal')
