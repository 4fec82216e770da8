import pytest

from rfdistill.flows import (
    BENIGN,
    DEFAULT_SCENARIO_FAMILY,
    MALICIOUS,
    NO_PORT,
    FlowLabel,
    LabelError,
    RawFlow,
    SchemaError,
    ingest,
    label_flow,
    load_key_value_file,
    parse_flow_file,
    parse_port,
    partition_by_family,
)

GOOD = "2011/08/10 09:46:53.047,0.000,udp,147.32.84.165,1025,<->,147.32.80.9,53,CON,0,0,1,60,60,flow=Background-UDP-Established"


def make_flow(label="flow=Background", **kw):
    base = dict(start_time="", duration=1.0, protocol="tcp", src_addr="10.0.0.1", src_port=1234,
                direction="->", dst_addr="8.8.8.8", dst_port=80, conn_state="S_", src_tos=0,
                dst_tos=0, tot_pkts=2, tot_bytes=120, src_bytes=60, label_text=label)
    base.update(kw)
    return RawFlow(**base)


def test_minimal_record(write_csv):
    flows, report = parse_flow_file(write_csv([GOOD]))
    assert report.rows == 1 and report.errors == []
    f = flows[0]
    assert (f.duration, f.tot_pkts, f.tot_bytes, f.src_bytes) == (0.0, 1, 60, 60)
    assert f.dst_bytes == 0


def test_byte_inconsistency_is_row_error(write_csv):
    bad = GOOD.replace(",1,60,60,", ",1,60,70,")
    flows, report = parse_flow_file(write_csv([GOOD, bad, GOOD]))
    assert len(flows) == 2
    assert len(report.errors) == 1
    line, msg = report.errors[0]
    assert line == 3
    assert "byte inconsistency" in msg


@pytest.mark.parametrize("field,value", [("Dur", "abc"), ("TotPkts", "x"), ("TotBytes", "1.5")])
def test_unparseable_numeric_is_row_error(write_csv, field, value):
    cols = GOOD.split(",")
    idx = {"Dur": 1, "TotPkts": 11, "TotBytes": 12}[field]
    cols[idx] = value
    flows, report = parse_flow_file(write_csv([",".join(cols)]))
    assert flows == []
    assert report.n_errors == 1


def test_missing_column_is_fatal(write_csv):
    header = "StartTime,Dur,Proto,SrcAddr,Sport,Dir,DstAddr,Dport,State,TotPkts,TotBytes,Label\n"
    with pytest.raises(SchemaError, match="SrcBytes"):
        parse_flow_file(write_csv([], header=header))


def test_optional_tos_defaults_to_zero(write_csv):
    row = GOOD.replace(",CON,0,0,", ",CON,,,")
    flows, _ = parse_flow_file(write_csv([row]))
    assert flows[0].src_tos == 0 and flows[0].dst_tos == 0


def test_custom_schema(write_csv):
    header = "ts,dur,p,sa,sp,d,da,dp,st,a,b,pk,by,sb,lab\n"
    schema = dict(zip(
        ["start_time", "duration", "protocol", "src_addr", "src_port", "direction", "dst_addr",
         "dst_port", "conn_state", "src_tos", "dst_tos", "tot_pkts", "tot_bytes", "src_bytes",
         "label_text"],
        header.strip().split(","),
    ))
    flows, report = parse_flow_file(write_csv([GOOD], header=header), schema)
    assert len(flows) == 1 and flows[0].dst_port == 53


@pytest.mark.parametrize("text,expected", [
    ("80", 80), ("0x0303", 0x303), ("0X1F", 31), ("", NO_PORT), ("http", NO_PORT), ("  443 ", 443),
])
def test_parse_port(text, expected):
    assert parse_port(text) == expected


def test_parsing_is_deterministic(write_csv):
    path = write_csv([GOOD, GOOD.replace("53", "80")])
    assert parse_flow_file(path)[0] == parse_flow_file(path)[0]


def test_label_botnet_scenario_1_is_neris():
    lab = label_flow(make_flow("flow=From-Botnet-V42-UDP-DNS"), "1")
    assert lab == FlowLabel(MALICIOUS, "Neris")


def test_label_background_is_benign():
    assert label_flow(make_flow("flow=Background-TCP-Established"), "1") == FlowLabel(BENIGN)


def test_label_normal_and_cnc():
    assert not label_flow(make_flow("flow=From-Normal-V42-Jist"), "3").is_malicious
    assert label_flow(make_flow("flow=From-Botnet-V51-1-TCP-CC6-Plain-HTTP-Encrypted-Data"), "3").family == "Rbot"
    assert label_flow(make_flow("flow=To-CnC-Server"), "5").family == "Virut"


def test_scenario_12_is_nsis():
    assert label_flow(make_flow("flow=From-Botnet-V52"), "12").family == "NSIS.ay"


def test_label_is_case_insensitive():
    assert label_flow(make_flow("FLOW=from-BOTNET"), "8").family == "Murlo"


def test_unknown_label_errors():
    with pytest.raises(LabelError):
        label_flow(make_flow("flow=Something-Else"), "1")
    with pytest.raises(LabelError):
        label_flow(make_flow(""), "1")


def test_family_map_covers_table():
    assert sorted(set(DEFAULT_SCENARIO_FAMILY.values())) == sorted(
        ["Neris", "Rbot", "Virut", "Menti", "Sogou", "Murlo", "NSIS.ay"])
    assert [DEFAULT_SCENARIO_FAMILY[s] for s in ("1", "2", "9")] == ["Neris"] * 3


def test_flow_label_invariant():
    with pytest.raises(ValueError):
        FlowLabel(MALICIOUS)
    with pytest.raises(ValueError):
        FlowLabel(BENIGN, "Neris")


def test_partition_counts():
    labeled = ([(make_flow(), FlowLabel(BENIGN))] * 10
               + [(make_flow(), FlowLabel(MALICIOUS, "Neris"))] * 3
               + [(make_flow(), FlowLabel(MALICIOUS, "Rbot"))] * 2)
    p = partition_by_family(labeled)
    assert len(p.benign) == 10
    assert {k: len(v) for k, v in p.families.items()} == {"Neris": 3, "Rbot": 2}


def test_partition_excludes_sogou():
    p = partition_by_family([(make_flow(), FlowLabel(MALICIOUS, "Sogou"))] * 4)
    assert p.benign == [] and p.families == {} and p.excluded == 4


def test_partition_empty():
    p = partition_by_family([])
    assert p.benign == [] and p.families == {} and p.total() == 0


def test_ingest_accounts_for_every_row(write_csv):
    rows = [
        GOOD,
        GOOD.replace("Background-UDP-Established", "From-Botnet-V42"),
        GOOD.replace(",1,60,60,", ",1,60,61,"),
        GOOD.replace("Background-UDP-Established", "Mystery"),
    ]
    p1 = write_csv(rows, "a.binetflow")
    p7 = write_csv([GOOD.replace("Background-UDP-Established", "From-Botnet-V44")], "b.binetflow")
    res = ingest([("1", p1), ("7", p7)])
    c = res.counts()
    assert c == {"rows": 5, "benign": 1, "malicious": {"Neris": 1}, "excluded": 1,
                 "parse_errors": 1, "unlabeled": 1}
    assert res.partition.total() + res.parse_errors + res.unlabeled == res.total_rows


def test_key_value_file(tmp_path):
    p = tmp_path / "map.txt"
    p.write_text("# scenario map\n1 = Neris\n\n12=NSIS.ay  # trailing\n")
    assert load_key_value_file(p) == {"1": "Neris", "12": "NSIS.ay"}
